//! Jacobi-preconditioned conjugate gradients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::DEFAULT_THRESHOLD;
use crate::sparse::CsrMatrix;

/// A symmetric positive definite operator on `R^dim`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        self.diagonal().iter().copied().collect()
    }
}

/// `A + shift I`.
pub struct Shifted<'a, A: LinearOperator + ?Sized> {
    pub inner: &'a A,
    pub shift: f64,
}

impl<A: LinearOperator + ?Sized> LinearOperator for Shifted<'_, A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.shift * xi;
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        self.inner.diagonal().into_iter().map(|d| d + self.shift).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual target `|Ax - b| / |b|`.
    pub tol: f64,
    /// Iteration cap; `None` means `10 sqrt(L)`.
    pub max_iter: Option<usize>,
    /// Relative threshold used to sparsify the kernel Gram matrix.
    pub threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None, threshold: DEFAULT_THRESHOLD }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or_else(|| ((10.0 * (dim as f64).sqrt()).ceil() as usize).max(10))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual at `x`.
    pub rel_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for SPD `A` with a Jacobi preconditioner, starting from `x0`
/// (or zero). Convergence is confirmed on the true residual; the recursion is
/// restarted from the current iterate when the recursive residual drifted.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<CgOutcome> {
    cfg.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let bnorm = norm(b);
    if !bnorm.is_finite() {
        return Err(Error::NumericalBreakdown("right-hand side is not finite".into()));
    }
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => return Err(Error::DimensionMismatch { expected: n, got: x0.len() }),
        None => vec![0.0; n],
    };
    let cap = cfg.iteration_cap(n);
    let mut ax = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    loop {
        // (Re)start from the true residual.
        a.apply(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let true_res = norm(&r) / bnorm;
        if !true_res.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite residual after {iterations} iterations"
            )));
        }
        if true_res <= cfg.tol {
            return Ok(CgOutcome { x, iterations, rel_residual: true_res });
        }
        if iterations >= cap {
            return Err(Error::NoConvergence { iterations, residual: true_res });
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dotp(&r, &z);
        while iterations < cap {
            a.apply(&p, &mut ap);
            iterations += 1;
            let pap = dotp(&p, &ap);
            if !(pap > 0.0) {
                if pap.is_finite() && rz == 0.0 {
                    break;
                }
                return Err(Error::NumericalBreakdown(format!(
                    "operator not positive definite along search direction (p'Ap = {pap:e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) / bnorm <= 0.5 * cfg.tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dotp(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_in_one_step() {
        let a = CsrMatrix::identity(6);
        let b = [1.0, -2.0, 3.0, 0.0, 5.0, 0.25];
        let out = conjugate_gradient(&a, &b, None, &SolverConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, b.to_vec());
    }

    #[test]
    fn zero_rhs() {
        let a = CsrMatrix::identity(3);
        let out = conjugate_gradient(&a, &[0.0; 3], None, &SolverConfig::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 3]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn random_spd_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(50, 50, |_, _| rng.random_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(50, 50) * 0.5;
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = SolverConfig { tol: 1e-12, max_iter: Some(2000), ..Default::default() };
        let out = conjugate_gradient(&a, &b, None, &cfg).unwrap();
        let exact = a.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let err = (DVector::from_column_slice(&out.x) - &exact).norm() / exact.norm();
        assert!(err < 1e-8, "{err}");
        assert!(out.rel_residual <= 1e-12);
    }

    #[test]
    fn shifted_and_warm_start() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)])
            .unwrap();
        let s = Shifted { inner: &a, shift: 1.0 };
        let b = [4.0, 4.0];
        let cold = conjugate_gradient(&s, &b, None, &SolverConfig::default()).unwrap();
        assert!((cold.x[0] - 1.0).abs() < 1e-8 && (cold.x[1] - 1.0).abs() < 1e-8);
        let warm = conjugate_gradient(&s, &b, Some(&cold.x), &SolverConfig::default()).unwrap();
        assert_eq!(warm.iterations, 0);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(40, 40, |_, _| rng.random_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(40, 40) * 1e-3;
        let b = vec![1.0; 40];
        let cfg = SolverConfig { tol: 1e-14, max_iter: Some(3), ..Default::default() };
        match conjugate_gradient(&a, &b, None, &cfg) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let err = conjugate_gradient(&a, &[1.0, 1.0], None, &SolverConfig::default());
        assert!(matches!(err, Err(Error::NumericalBreakdown(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_iter: Some(0), ..Default::default() }.validate().is_err());
        assert!(SolverConfig { threshold: 1.5, ..Default::default() }.validate().is_err());
        assert_eq!(SolverConfig::default().iteration_cap(10_000), 1000);
    }
}
