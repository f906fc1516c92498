//! Grid evaluation, quadrature L2 distances and projection of bivariate
//! fields onto the positive semidefinite cone.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{MeanEstimate, SecondMomentEstimate};
use crate::field::SourceModel;
use crate::kernel::ZonalKernel;
use crate::sphere::{dot, SphereGrid, SphericalPoint};

/// Column vector of grid values.
pub type Vector = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum GridValues {
    Univariate(DVector<f64>),
    /// `values[(a, b)]` is the field at `(node_a, node_b)`.
    Bivariate(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: SphereGrid,
    values: GridValues,
    symmetric: bool,
}

impl GridField {
    pub fn univariate(grid: SphereGrid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values: GridValues::Univariate(values), symmetric: false })
    }

    /// A bivariate field; `symmetric` fields are checked to 1e-9 relative to their
    /// largest entry.
    pub fn bivariate(grid: SphereGrid, values: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        let n = grid.len();
        if values.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: values.nrows() });
        }
        if symmetric {
            let scale = values.amax().max(1.0);
            let asym = (&values - values.transpose()).amax();
            if asym > 1e-9 * scale {
                return Err(Error::InvalidArgument(format!(
                    "field tagged symmetric has asymmetry {asym:.3e}"
                )));
            }
        }
        Ok(Self { grid, values: GridValues::Bivariate(values), symmetric })
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }
    pub fn values(&self) -> &GridValues {
        &self.values
    }
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.values {
            GridValues::Bivariate(m) => Some(m),
            GridValues::Univariate(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&DVector<f64>> {
        match &self.values {
            GridValues::Univariate(v) => Some(v),
            GridValues::Bivariate(_) => None,
        }
    }

    /// `nodes_path`: `x,y,z,weight` rows; `values_path`: row-major values, one
    /// grid row per line, `%.12e`.
    pub fn save(&self, nodes_path: &Path, values_path: &Path) -> Result<()> {
        let mut nodes = BufWriter::new(fs::File::create(nodes_path)?);
        writeln!(nodes, "x,y,z,weight")?;
        for (p, w) in self.grid.nodes().iter().zip(self.grid.weights()) {
            writeln!(nodes, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x(), p.y(), p.z(), w)?;
        }
        nodes.flush()?;
        let mut out = BufWriter::new(fs::File::create(values_path)?);
        match &self.values {
            GridValues::Univariate(v) => {
                for x in v.iter() {
                    writeln!(out, "{x:.12e}")?;
                }
            }
            GridValues::Bivariate(m) => {
                for a in 0..m.nrows() {
                    let row: Vec<String> = m.row(a).iter().map(|x| format!("{x:.12e}")).collect();
                    writeln!(out, "{}", row.join(","))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a field written by [`GridField::save`]; square value tables with
    /// more than one node are read as bivariate.
    pub fn load(nodes_path: &Path, values_path: &Path) -> Result<Self> {
        let grid = read_nodes(nodes_path)?;
        let n = grid.len();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, line) in BufReader::new(fs::File::open(values_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("values line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rows.len() });
        }
        if n > 1 && rows.iter().all(|r| r.len() == n) {
            let m = DMatrix::from_fn(n, n, |a, b| rows[a][b]);
            let symmetric = (&m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0);
            Self::bivariate(grid, m, symmetric)
        } else if rows.iter().all(|r| r.len() == 1) {
            Self::univariate(grid, DVector::from_iterator(n, rows.into_iter().map(|r| r[0])))
        } else {
            Err(Error::Parse("value table is neither a column nor a square matrix".into()))
        }
    }
}

fn read_nodes(path: &Path) -> Result<SphereGrid> {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty nodes file".into()))??;
    if header.trim() != "x,y,z,weight" {
        return Err(Error::Parse(format!("unexpected nodes header `{header}`")));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("nodes line {}: {e}", i + 2)))?;
        if f.len() != 4 {
            return Err(Error::Parse(format!("nodes line {}: expected 4 fields", i + 2)));
        }
        nodes.push(SphericalPoint::new(f[0], f[1], f[2])?);
        weights.push(f[3]);
    }
    SphereGrid::new(nodes, weights)
}

/// `Phi[g, m] = psi(<node_g, x_m>)`.
fn design(kernel: &ZonalKernel, nodes: &[SphericalPoint], points: &[SphericalPoint]) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| nodes.iter().map(|g| kernel.eval(dot(g, p))).collect())
        .collect();
    DMatrix::from_fn(nodes.len(), points.len(), |g, m| cols[m][g])
}

/// Estimates that can be tabulated on a grid.
pub trait GridEval {
    fn eval_grid(&self, grid: &SphereGrid) -> Result<GridField>;
}

impl GridEval for MeanEstimate {
    fn eval_grid(&self, grid: &SphereGrid) -> Result<GridField> {
        let phi = design(self.kernel(), grid.nodes(), self.points());
        let v = phi * DVector::from_column_slice(self.coeffs());
        GridField::univariate(grid.clone(), v)
    }
}

impl GridEval for SecondMomentEstimate {
    fn eval_grid(&self, grid: &SphereGrid) -> Result<GridField> {
        let g = grid.len();
        let phi = design(self.kernel(), grid.nodes(), self.points());
        // R = T Phi^T with T[:, right] = sum_terms w Phi[:, left].
        let mut t = DMatrix::zeros(g, self.points().len());
        for term in self.terms() {
            let src = phi.column(term.left).clone_owned();
            t.column_mut(term.right).axpy(term.weight, &src, 1.0);
        }
        let values = t * phi.transpose();
        let symmetric = self.lag() == 0;
        let values = if symmetric { (&values + values.transpose()) * 0.5 } else { values };
        GridField::bivariate(grid.clone(), values, symmetric)
    }
}

pub fn eval_on_grid<E: GridEval + ?Sized>(est: &E, grid: &SphereGrid) -> Result<GridField> {
    est.eval_grid(grid)
}

/// `C = R - mu (x) mu` on the grid.
pub fn covariance_on_grid(
    r_est: &SecondMomentEstimate,
    m_est: &MeanEstimate,
    grid: &SphereGrid,
) -> Result<GridField> {
    let r = r_est.eval_grid(grid)?;
    let mu = m_est.eval_grid(grid)?;
    let mu = mu.vector().unwrap();
    let c = r.matrix().unwrap() - mu * mu.transpose();
    GridField::bivariate(grid.clone(), c, r.is_symmetric())
}

/// Population second moment of a source model on the grid.
pub fn truth_on_grid(model: &SourceModel, grid: &SphereGrid) -> Result<GridField> {
    let phi = design(model.kernel(), grid.nodes(), model.sources());
    let values = &phi * model.weight_cov() * phi.transpose();
    let values = (&values + values.transpose()) * 0.5;
    GridField::bivariate(grid.clone(), values, true)
}

/// Outcome of [`project_psd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    /// Sum of the magnitudes of the clipped eigenvalues.
    pub clipped_mass: f64,
    pub negative_count: usize,
    pub min_eigenvalue_before: f64,
    pub min_eigenvalue_after: f64,
}

/// Nearest PSD operator in the quadrature inner product: eigendecompose
/// `W^{1/2} F W^{1/2}` (symmetrized) and set negative eigenvalues to zero.
pub fn project_psd(field: &GridField, tol: f64) -> Result<(GridField, PsdReport)> {
    let f = field
        .matrix()
        .ok_or_else(|| Error::InvalidArgument("PSD projection needs a bivariate field".into()))?;
    let sw = DVector::from_iterator(field.grid.len(), field.grid.weights().iter().map(|w| w.sqrt()));
    let mut m = f.clone();
    for a in 0..m.nrows() {
        for b in 0..m.ncols() {
            m[(a, b)] *= sw[a] * sw[b];
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::NumericalBreakdown("eigendecomposition produced non-finite values".into()));
    }
    let min_before = eig.eigenvalues.min();
    let negatives: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&l| l < 0.0).collect();
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    let out_sym = (&out + out.transpose()) * 0.5;
    let min_after = out_sym.clone().symmetric_eigenvalues().min();
    if min_after < -tol {
        return Err(Error::NotPsd { min_eigenvalue: min_after });
    }
    out = out_sym;
    for a in 0..out.nrows() {
        for b in 0..out.ncols() {
            out[(a, b)] /= sw[a] * sw[b];
        }
    }
    let report = PsdReport {
        clipped_mass: negatives.iter().map(|l| l.abs()).sum(),
        negative_count: negatives.len(),
        min_eigenvalue_before: min_before,
        min_eigenvalue_after: min_after,
    };
    Ok((GridField::bivariate(field.grid.clone(), out, true)?, report))
}

/// Quadrature L2 distance `sqrt(sum w_a w_b (f - g)^2)` (or `sqrt(sum w_a (f - g)^2)`).
pub fn l2_error(a: &GridField, b: &GridField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidArgument("fields live on different grids".into()));
    }
    let w = a.grid.weights();
    match (&a.values, &b.values) {
        (GridValues::Univariate(x), GridValues::Univariate(y)) => {
            Ok(x.iter().zip(y.iter()).zip(w).map(|((p, q), w)| w * (p - q).powi(2)).sum::<f64>().sqrt())
        }
        (GridValues::Bivariate(x), GridValues::Bivariate(y)) => {
            let n = w.len();
            let mut s = 0.0;
            for c in 0..n {
                for r in 0..n {
                    s += w[r] * w[c] * (x[(r, c)] - y[(r, c)]).powi(2);
                }
            }
            Ok(s.sqrt())
        }
        _ => Err(Error::InvalidArgument("cannot compare univariate and bivariate fields".into())),
    }
}

/// Quadrature L2 norm.
pub fn l2_norm(a: &GridField) -> f64 {
    let w = a.grid.weights();
    match &a.values {
        GridValues::Univariate(x) => x.iter().zip(w).map(|(p, w)| w * p * p).sum::<f64>().sqrt(),
        GridValues::Bivariate(x) => {
            let n = w.len();
            let mut s = 0.0;
            for c in 0..n {
                for r in 0..n {
                    s += w[r] * w[c] * x[(r, c)].powi(2);
                }
            }
            s.sqrt()
        }
    }
}
