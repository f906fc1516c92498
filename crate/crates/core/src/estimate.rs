//! Representer-form estimators of the mean, the second-order moment and the
//! lag-h autocovariance of a random field on the sphere.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gram::{
    build_h_general, build_j, build_mean_gram, h_nnz, offdiagonal_pairs, BlockGram,
    KhatriRaoOperator, PairLayout,
};
use crate::kernel::{KernelSpec, ZonalKernel};
use crate::solver::{conjugate_gradient, SolverConfig};
use crate::sphere::{dot, SphericalPoint};

const FOUR_PI: f64 = 4.0 * PI;
const CONDITION_WARN: f64 = 1e14;
/// Largest mean system for which the Gram spectrum is computed for the
/// conditioning check.
const CONDITION_CHECK_MAX: usize = 1024;

/// `[psi(<u, x_m>)]_m`
pub fn kernel_row(kernel: &ZonalKernel, points: &[SphericalPoint], u: &SphericalPoint) -> Vec<f64> {
    points.iter().map(|p| kernel.eval(dot(u, p))).collect()
}

/// `mu(u) = sum_m c_m psi(<u, x_m>)` with `c = alpha / sqrt(r_i)`.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    points: Vec<SphericalPoint>,
    alpha: Vec<f64>,
    coeffs: Vec<f64>,
    kernel: ZonalKernel,
    eta: f64,
    warning: Option<String>,
}

impl MeanEstimate {
    pub fn points(&self) -> &[SphericalPoint] {
        &self.points
    }
    /// Solution of the representer system, one weight per sample.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    /// Expansion coefficients including the `1 / sqrt(r_i)` factors.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    pub fn kernel(&self) -> &ZonalKernel {
        &self.kernel
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    /// Set when the Gram matrix is close to singular.
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// Zero function with the given kernel.
    pub fn zero(kernel: ZonalKernel) -> Self {
        Self { points: vec![], alpha: vec![], coeffs: vec![], kernel, eta: 1.0, warning: None }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = EstimateHeader {
            estimate: EstimateKind::Mean,
            kernel: kernel_spec(&self.kernel)?,
            eta: self.eta,
            lag: 0,
            n: None,
            r: None,
        };
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# {}", serde_json::to_string(&header)?)?;
        writeln!(out, "x,y,z,weight")?;
        for (p, c) in self.points.iter().zip(&self.coeffs) {
            writeln!(out, "{:e},{:e},{:e},{c:e}", p.x(), p.y(), p.z())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, rows) = read_estimate(fs::File::open(path)?, 4)?;
        if header.estimate != EstimateKind::Mean {
            return Err(Error::Parse("file holds a second-moment estimate, not a mean".into()));
        }
        let mut points = Vec::with_capacity(rows.len());
        let mut coeffs = Vec::with_capacity(rows.len());
        for row in rows {
            points.push(SphericalPoint::new(row[0], row[1], row[2])?);
            coeffs.push(row[3]);
        }
        Ok(Self {
            points,
            alpha: vec![],
            coeffs,
            kernel: header.kernel.build()?,
            eta: header.eta,
            warning: None,
        })
    }
}

/// Solves `(G + eta n / (4 pi) I) alpha = y`, `y_ij = w_ij / sqrt(r_i)`, densely.
pub fn fit_mean(dataset: &Dataset, kernel: &ZonalKernel, eta: f64) -> Result<MeanEstimate> {
    check_eta(eta)?;
    let g = build_mean_gram(dataset, kernel);
    let m = g.nrows();
    let mut warning = None;
    if m <= CONDITION_CHECK_MAX {
        let eig = g.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if hi / lo.max(f64::MIN_POSITIVE) > CONDITION_WARN || lo <= 0.0 {
            warning = Some(format!(
                "mean Gram matrix is ill-conditioned (eigenvalues in [{lo:.3e}, {hi:.3e}])"
            ));
        }
    }
    let ridge = eta * dataset.n() as f64 / FOUR_PI;
    let mut a = g;
    for i in 0..m {
        a[(i, i)] += ridge;
    }
    let mut y = Vec::with_capacity(m);
    let mut scale = Vec::with_capacity(m);
    for rep in dataset.replicates() {
        let s = 1.0 / (rep.len() as f64).sqrt();
        y.extend(rep.values.iter().map(|w| w * s));
        scale.extend(std::iter::repeat_n(s, rep.len()));
    }
    let chol = a.cholesky().ok_or_else(|| {
        Error::NumericalBreakdown("mean system is not positive definite".into())
    })?;
    let alpha = chol.solve(&DVector::from_vec(y));
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite mean weights".into()));
    }
    let coeffs = alpha.iter().zip(&scale).map(|(a, s)| a * s).collect();
    Ok(MeanEstimate {
        points: dataset.locations(),
        alpha: alpha.as_slice().to_vec(),
        coeffs,
        kernel: kernel.clone(),
        eta,
        warning,
    })
}

pub fn eval_mean(est: &MeanEstimate, u: &SphericalPoint) -> f64 {
    est.points.iter().zip(&est.coeffs).map(|(p, c)| c * est.kernel.eval(dot(u, p))).sum()
}

/// One representer term `weight * psi(<u, x_left>) psi(<v, x_right>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub left: usize,
    pub right: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitPath {
    /// Block Khatri-Rao system solved by conjugate gradients.
    Fast,
    /// Dense system with per-replicate normalization, solved by Cholesky.
    Dense,
}

/// Solver and assembly statistics of a second-moment fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub path: FitPath,
    pub dim: usize,
    pub ridge: f64,
    pub iterations: usize,
    pub rel_residual: f64,
    pub j_nnz: Option<usize>,
    pub j_nnz_fraction: Option<f64>,
    pub h_nnz: Option<u64>,
    pub h_nnz_fraction: Option<f64>,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

/// `R(u, v) = sum_terms w psi(<u, x_left>) psi(<v, x_right>)`.
#[derive(Debug, Clone)]
pub struct SecondMomentEstimate {
    points: Vec<SphericalPoint>,
    terms: Vec<PairTerm>,
    beta: Vec<f64>,
    kernel: ZonalKernel,
    eta: f64,
    lag: i64,
    n: usize,
    r: Option<usize>,
    diagnostics: Option<FitDiagnostics>,
}

impl SecondMomentEstimate {
    pub fn points(&self) -> &[SphericalPoint] {
        &self.points
    }
    pub fn terms(&self) -> &[PairTerm] {
        &self.terms
    }
    /// Solution vector of the linear system in the parameterization of the
    /// path that produced it (empty for loaded estimates).
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn kernel(&self) -> &ZonalKernel {
        &self.kernel
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn lag(&self) -> i64 {
        self.lag
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn r(&self) -> Option<usize> {
        self.r
    }
    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// The evaluator of `R(v, u)`.
    pub fn transposed(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            std::mem::swap(&mut t.left, &mut t.right);
        }
        out.lag = -self.lag;
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = EstimateHeader {
            estimate: EstimateKind::SecondMoment,
            kernel: kernel_spec(&self.kernel)?,
            eta: self.eta,
            lag: self.lag,
            n: Some(self.n),
            r: self.r,
        };
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "# {}", serde_json::to_string(&header)?)?;
        writeln!(out, "x1,y1,z1,x2,y2,z2,weight")?;
        for t in &self.terms {
            let (a, b) = (&self.points[t.left], &self.points[t.right]);
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                a.x(),
                a.y(),
                a.z(),
                b.x(),
                b.y(),
                b.z(),
                t.weight
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, rows) = read_estimate(fs::File::open(path)?, 7)?;
        if header.estimate != EstimateKind::SecondMoment {
            return Err(Error::Parse("file holds a mean estimate, not a second moment".into()));
        }
        let mut index: HashMap<[u64; 3], usize> = HashMap::new();
        let mut points = Vec::new();
        let mut intern = |c: &[f64]| -> Result<usize> {
            let key = [c[0].to_bits(), c[1].to_bits(), c[2].to_bits()];
            if let Some(&i) = index.get(&key) {
                return Ok(i);
            }
            points.push(SphericalPoint::new(c[0], c[1], c[2])?);
            index.insert(key, points.len() - 1);
            Ok(points.len() - 1)
        };
        let mut terms = Vec::with_capacity(rows.len());
        for row in &rows {
            let left = intern(&row[0..3])?;
            let right = intern(&row[3..6])?;
            terms.push(PairTerm { left, right, weight: row[6] });
        }
        Ok(Self {
            points,
            terms,
            beta: vec![],
            kernel: header.kernel.build()?,
            eta: header.eta,
            lag: header.lag,
            n: header.n.unwrap_or(0),
            r: header.r,
            diagnostics: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum EstimateKind {
    Mean,
    SecondMoment,
}

/// First line of an estimate file, after `# `.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EstimateHeader {
    estimate: EstimateKind,
    kernel: KernelSpec,
    eta: f64,
    lag: i64,
    n: Option<usize>,
    r: Option<usize>,
}

fn kernel_spec(kernel: &ZonalKernel) -> Result<KernelSpec> {
    kernel
        .spec()
        .ok_or_else(|| Error::InvalidArgument("kernel has no serializable specification".into()))
}

fn read_estimate<R: Read>(input: R, width: usize) -> Result<(EstimateHeader, Vec<Vec<f64>>)> {
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty estimate file".into()))??;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("estimate file must start with a `# {...}` header".into()))?;
    let header: EstimateHeader = serde_json::from_str(json.trim())?;
    lines.next().ok_or_else(|| Error::Parse("missing CSV column header".into()))??;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 3)))?;
        if row.len() != width {
            return Err(Error::Parse(format!(
                "line {}: expected {width} fields, found {}",
                lineno + 3,
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty must be > 0, got {eta}")));
    }
    Ok(())
}

/// Kernel Gram in block form plus its sparsity counts.
pub struct PreparedGram {
    pub blocks: BlockGram,
    pub n: usize,
    pub r: usize,
    pub j_nnz: usize,
    pub h_nnz: u64,
    pub seconds: f64,
}

impl PreparedGram {
    pub fn new(dataset: &Dataset, kernel: &ZonalKernel, threshold: f64) -> Result<Self> {
        let start = Instant::now();
        let r = dataset.constant_r().ok_or(Error::RaggedReplicates)?;
        let locs: Vec<Vec<SphericalPoint>> =
            dataset.replicates().iter().map(|rep| rep.locations.clone()).collect();
        let j = build_j(&locs, kernel, threshold)?;
        let h_nnz = if r >= 2 { h_nnz(&j, r)? } else { 0 };
        let blocks = BlockGram::from_csr(&j, r)?;
        Ok(Self {
            blocks,
            n: dataset.n(),
            r,
            j_nnz: j.nnz(),
            h_nnz,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn j_nnz_fraction(&self) -> f64 {
        self.j_nnz as f64 / ((self.n * self.r) as f64).powi(2)
    }
}

/// `z_l = w_ij w_ik` over the off-diagonal pairs in vectorization order.
pub fn pair_products(dataset: &Dataset) -> Vec<f64> {
    let reps = dataset.replicates();
    offdiagonal_pairs(&dataset.r_list())
        .into_iter()
        .map(|(i, j, k)| reps[i].values[j] * reps[i].values[k])
        .collect()
}

/// `z = W_{t+h,j} W_{t,k}` in [`PairLayout::Lag`] order.
pub fn lag_products(dataset: &Dataset, h: usize) -> Result<Vec<f64>> {
    let r = dataset.constant_r().ok_or(Error::RaggedReplicates)?;
    let reps = dataset.replicates();
    Ok(PairLayout::Lag(h)
        .pairs(dataset.n(), r)
        .into_iter()
        .map(|(a, j, b, k)| reps[a].values[j] * reps[b].values[k])
        .collect())
}

/// Ridge of the fast-path system: `eta L / (4 pi)^2`, `L` the number of pairs.
pub fn fast_ridge(eta: f64, pairs: usize) -> f64 {
    eta * pairs as f64 / (FOUR_PI * FOUR_PI)
}

fn fast_terms(layout: PairLayout, n: usize, r: usize, beta: &[f64]) -> Vec<PairTerm> {
    layout
        .pairs(n, r)
        .into_iter()
        .zip(beta)
        .map(|((a, j, b, k), &w)| PairTerm { left: a * r + j, right: b * r + k, weight: w })
        .collect()
}

/// Averages the weights of `(j, k)` and `(k, j)`; the exact solution is
/// invariant under the swap.
fn symmetrize_offdiagonal(beta: &mut [f64], n: usize, r: usize) {
    let per = r * (r - 1);
    let off = |j: usize, k: usize| k * (r - 1) + j - usize::from(j > k);
    for i in 0..n {
        let b = &mut beta[i * per..(i + 1) * per];
        for k in 0..r {
            for j in 0..k {
                let avg = 0.5 * (b[off(j, k)] + b[off(k, j)]);
                b[off(j, k)] = avg;
                b[off(k, j)] = avg;
            }
        }
    }
}

/// Fast-path solve on a prepared Gram; `x0` warm-starts CG.
pub fn solve_fast(
    gram: &PreparedGram,
    layout: PairLayout,
    z: &[f64],
    eta: f64,
    cfg: &SolverConfig,
    mask: Option<&[bool]>,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, usize, f64)> {
    check_eta(eta)?;
    let dim = layout.len(gram.n, gram.r);
    // The ridge counts all pairs, also under a mask.
    let ridge = fast_ridge(eta, dim);
    let mut op = KhatriRaoOperator::new(&gram.blocks, layout, ridge)?;
    if let Some(m) = mask {
        op = op.with_mask(m)?;
    }
    let out = conjugate_gradient(&op, z, x0, cfg)?;
    let mut beta = out.x;
    if layout == PairLayout::OffDiagonal && mask.is_none() {
        symmetrize_offdiagonal(&mut beta, gram.n, gram.r);
    }
    Ok((beta, out.iterations, out.rel_residual))
}

/// Second-moment estimate. Constant `r`: CG on `(H + eta L / (4 pi)^2 I) beta = z`
/// with the thresholded block Gram and `z_l = w_ij w_ik`. Unequal `r_i`: see
/// [`fit_second_moment_dense`].
pub fn fit_second_moment(
    dataset: &Dataset,
    kernel: &ZonalKernel,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<SecondMomentEstimate> {
    check_eta(eta)?;
    cfg.validate()?;
    dataset.require_pairs()?;
    if dataset.constant_r().is_none() {
        return fit_second_moment_dense(dataset, kernel, eta);
    }
    let gram = PreparedGram::new(dataset, kernel, cfg.threshold)?;
    fit_second_moment_prepared(dataset, &gram, kernel, eta, cfg, None)
}

/// Fast path on a Gram prepared once for several penalties.
pub fn fit_second_moment_prepared(
    dataset: &Dataset,
    gram: &PreparedGram,
    kernel: &ZonalKernel,
    eta: f64,
    cfg: &SolverConfig,
    x0: Option<&[f64]>,
) -> Result<SecondMomentEstimate> {
    let (n, r) = (gram.n, gram.r);
    let z = pair_products(dataset);
    let start = Instant::now();
    let layout = PairLayout::OffDiagonal;
    let (beta, iterations, rel_residual) = solve_fast(gram, layout, &z, eta, cfg, None, x0)?;
    let dim = z.len();
    let diagnostics = FitDiagnostics {
        path: FitPath::Fast,
        dim,
        ridge: fast_ridge(eta, dim),
        iterations,
        rel_residual,
        j_nnz: Some(gram.j_nnz),
        j_nnz_fraction: Some(gram.j_nnz_fraction()),
        h_nnz: Some(gram.h_nnz),
        h_nnz_fraction: Some(gram.h_nnz as f64 / (dim as f64).powi(2)),
        assembly_seconds: gram.seconds,
        solve_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(SecondMomentEstimate {
        points: dataset.locations(),
        terms: fast_terms(layout, n, r, &beta),
        beta,
        kernel: kernel.clone(),
        eta,
        lag: 0,
        n,
        r: Some(r),
        diagnostics: Some(diagnostics),
    })
}

/// Dense second-moment solve `(H + eta n / (4 pi)^2 I) beta = z` with
/// `z_l = w_ij w_ik / sqrt(r_i (r_i - 1))` and the normalized dense Gram.
/// Handles unequal replicate sizes; no thresholding.
pub fn fit_second_moment_dense(
    dataset: &Dataset,
    kernel: &ZonalKernel,
    eta: f64,
) -> Result<SecondMomentEstimate> {
    check_eta(eta)?;
    dataset.require_pairs()?;
    let start = Instant::now();
    let h = build_h_general(dataset, kernel)?;
    let assembly_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let pairs = offdiagonal_pairs(&dataset.r_list());
    let norm: Vec<f64> = dataset
        .r_list()
        .iter()
        .map(|&r| 1.0 / ((r * (r - 1)) as f64).sqrt())
        .collect();
    let z: DVector<f64> = DVector::from_iterator(
        pairs.len(),
        pair_products(dataset).into_iter().zip(&pairs).map(|(v, &(i, _, _))| v * norm[i]),
    );
    let ridge = eta * dataset.n() as f64 / (FOUR_PI * FOUR_PI);
    let a = &h + DMatrix::identity(h.nrows(), h.ncols()) * ridge;
    let chol = a.cholesky().ok_or_else(|| {
        Error::NumericalBreakdown("second-moment system is not positive definite".into())
    })?;
    let beta = chol.solve(&z);
    let resid = (&h * &beta + &beta * ridge - &z).norm() / z.norm().max(f64::MIN_POSITIVE);
    let mut offsets = vec![0usize];
    for rep in dataset.replicates() {
        offsets.push(offsets.last().unwrap() + rep.len());
    }
    let terms = pairs
        .iter()
        .zip(beta.iter())
        .map(|(&(i, j, k), &b)| PairTerm {
            left: offsets[i] + j,
            right: offsets[i] + k,
            weight: b * norm[i],
        })
        .collect();
    let dim = pairs.len();
    Ok(SecondMomentEstimate {
        points: dataset.locations(),
        terms,
        beta: beta.as_slice().to_vec(),
        kernel: kernel.clone(),
        eta,
        lag: 0,
        n: dataset.n(),
        r: dataset.constant_r(),
        diagnostics: Some(FitDiagnostics {
            path: FitPath::Dense,
            dim,
            ridge,
            iterations: 0,
            rel_residual: if z.norm() == 0.0 { 0.0 } else { resid },
            j_nnz: None,
            j_nnz_fraction: None,
            h_nnz: None,
            h_nnz_fraction: None,
            assembly_seconds,
            solve_seconds: start.elapsed().as_secs_f64(),
        }),
    })
}

/// Lag-h autocovariance `R_h(u, v) ~ E[X_{t+h}(u) X_t(v)]`.
///
/// `h > 0`: pairs `(U_{t+h,j}, U_{t,k})` for all `j, k` including `j = k`,
/// system `(H_h + eta N_h / (4 pi)^2 I) beta = z_h` with `N_h = (n - h) r^2`.
/// `h = 0` is [`fit_second_moment`]; `h < 0` is the transpose of the `|h|` fit.
pub fn fit_lag_autocov(
    dataset: &Dataset,
    kernel: &ZonalKernel,
    eta: f64,
    h: i64,
    cfg: &SolverConfig,
) -> Result<SecondMomentEstimate> {
    if h == 0 {
        return fit_second_moment(dataset, kernel, eta, cfg);
    }
    let n = dataset.n();
    if h.unsigned_abs() as usize + 2 > n {
        return Err(Error::InsufficientData(format!(
            "lag {h} needs at least {} replicates, have {n}",
            h.unsigned_abs() + 2
        )));
    }
    if h < 0 {
        return Ok(fit_lag_autocov(dataset, kernel, eta, -h, cfg)?.transposed());
    }
    check_eta(eta)?;
    cfg.validate()?;
    let gram = PreparedGram::new(dataset, kernel, cfg.threshold)?;
    fit_lag_prepared(dataset, &gram, kernel, eta, h as usize, cfg, None)
}

/// Positive-lag fit on a prepared Gram.
pub fn fit_lag_prepared(
    dataset: &Dataset,
    gram: &PreparedGram,
    kernel: &ZonalKernel,
    eta: f64,
    h: usize,
    cfg: &SolverConfig,
    x0: Option<&[f64]>,
) -> Result<SecondMomentEstimate> {
    let (n, r) = (gram.n, gram.r);
    let layout = PairLayout::Lag(h);
    let z = lag_products(dataset, h)?;
    let start = Instant::now();
    let (beta, iterations, rel_residual) = solve_fast(gram, layout, &z, eta, cfg, None, x0)?;
    let dim = z.len();
    Ok(SecondMomentEstimate {
        points: dataset.locations(),
        terms: fast_terms(layout, n, r, &beta),
        beta,
        kernel: kernel.clone(),
        eta,
        lag: h as i64,
        n,
        r: Some(r),
        diagnostics: Some(FitDiagnostics {
            path: FitPath::Fast,
            dim,
            ridge: fast_ridge(eta, dim),
            iterations,
            rel_residual,
            j_nnz: Some(gram.j_nnz),
            j_nnz_fraction: Some(gram.j_nnz_fraction()),
            h_nnz: None,
            h_nnz_fraction: None,
            assembly_seconds: gram.seconds,
            solve_seconds: start.elapsed().as_secs_f64(),
        }),
    })
}

pub fn eval_second_moment(est: &SecondMomentEstimate, u: &SphericalPoint, v: &SphericalPoint) -> f64 {
    let fu = kernel_row(&est.kernel, &est.points, u);
    let fv = kernel_row(&est.kernel, &est.points, v);
    est.terms.iter().map(|t| t.weight * fu[t.left] * fv[t.right]).sum()
}

/// `C(u, v) = R(u, v) - mu(u) mu(v)`.
pub fn eval_covariance(
    r_est: &SecondMomentEstimate,
    m_est: &MeanEstimate,
    u: &SphericalPoint,
    v: &SphericalPoint,
) -> f64 {
    eval_second_moment(r_est, u, v) - eval_mean(m_est, u) * eval_mean(m_est, v)
}

/// Objective `(4 pi)^2 / n |z - H beta|^2 + eta beta' H beta` of the dense
/// parameterization and its gradient.
pub fn dense_objective(
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    beta: &DVector<f64>,
    eta: f64,
    n: usize,
) -> (f64, DVector<f64>) {
    let c = FOUR_PI * FOUR_PI / n as f64;
    let hb = h * beta;
    let resid = z - &hb;
    let value = c * resid.norm_squared() + eta * beta.dot(&hb);
    let grad = h * (&hb * c - z * c + beta * eta) * 2.0;
    (value, grad)
}

/// Normalized pair products of the dense parameterization.
pub fn dense_rhs(dataset: &Dataset) -> DVector<f64> {
    let pairs = offdiagonal_pairs(&dataset.r_list());
    let r = dataset.r_list();
    DVector::from_iterator(
        pairs.len(),
        pair_products(dataset)
            .into_iter()
            .zip(&pairs)
            .map(|(v, &(i, _, _))| v / ((r[i] * (r[i] - 1)) as f64).sqrt()),
    )
}
