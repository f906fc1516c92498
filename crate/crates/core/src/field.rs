//! Sparse Gaussian random fields `X(u) = sum_q xi_q psi(<u, v_q>)`, the noisy
//! measurement model and a stationary functional AR(1) extension.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Replicate};
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, ZonalKernel};
use crate::sphere::{dot, sample_uniform_sphere, sample_uniform_with, SphericalPoint};

/// Weight covariance printed for the reference simulation (five sources).
pub const REFERENCE_WEIGHT_COV: [[f64; 5]; 5] = [
    [0.812, -0.013, -0.209, -0.416, -0.028],
    [-0.013, 0.974, -0.008, -0.632, -0.372],
    [-0.209, -0.008, 0.909, -0.095, -0.588],
    [-0.416, -0.632, -0.095, 1.000, 0.235],
    [-0.028, -0.372, -0.588, 0.235, 0.929],
];

const PSD_REL_TOL: f64 = 1e-12;

// Stream layout for ChaCha: sampling of replicate i uses stream i, i.i.d. weights of
// replicate i use WEIGHT_STREAM + i, and the AR(1) weight recursion uses AR_STREAM.
const WEIGHT_STREAM: u64 = 1 << 40;
const AR_STREAM: u64 = 1 << 41;

#[derive(Debug, Clone)]
pub struct SourceModel {
    sources: Vec<SphericalPoint>,
    weight_cov: DMatrix<f64>,
    kernel: ZonalKernel,
}

/// JSON form of a [`SourceModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceModelFile {
    pub sources: Vec<[f64; 3]>,
    pub weight_cov: Vec<Vec<f64>>,
    pub kernel: KernelSpec,
}

impl SourceModel {
    pub fn new(
        sources: Vec<SphericalPoint>,
        weight_cov: DMatrix<f64>,
        kernel: ZonalKernel,
    ) -> Result<Self> {
        let q = sources.len();
        if q == 0 {
            return Err(Error::EmptyInput("a source model needs at least one source"));
        }
        if weight_cov.nrows() != q || weight_cov.ncols() != q {
            return Err(Error::DimensionMismatch { expected: q, got: weight_cov.nrows() });
        }
        for i in 0..q {
            for j in 0..i {
                if (weight_cov[(i, j)] - weight_cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "weight covariance is not symmetric at ({i}, {j})"
                    )));
                }
                if sources[i] == sources[j] {
                    return Err(Error::InvalidArgument(format!("sources {j} and {i} coincide")));
                }
            }
        }
        let min_eig = weight_cov.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_REL_TOL * weight_cov.trace().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eigenvalue: min_eig });
        }
        Ok(Self { sources, weight_cov, kernel })
    }

    /// Reference configuration: five uniformly drawn sources, the printed 5x5
    /// weight covariance and the given kernel.
    pub fn reference(kernel: ZonalKernel, seed: u64) -> Result<Self> {
        let cov = DMatrix::from_fn(5, 5, |i, j| REFERENCE_WEIGHT_COV[i][j]);
        Self::new(sample_uniform_sphere(5, seed)?, cov, kernel)
    }

    pub fn sources(&self) -> &[SphericalPoint] {
        &self.sources
    }
    pub fn weight_cov(&self) -> &DMatrix<f64> {
        &self.weight_cov
    }
    pub fn kernel(&self) -> &ZonalKernel {
        &self.kernel
    }
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// `[psi(<u, v_1>), ..., psi(<u, v_Q>)]`
    pub fn features(&self, u: &SphericalPoint) -> DVector<f64> {
        DVector::from_iterator(
            self.sources.len(),
            self.sources.iter().map(|v| self.kernel.eval(dot(u, v))),
        )
    }

    pub fn to_file(&self) -> Result<SourceModelFile> {
        let kernel = self.kernel.spec().ok_or_else(|| {
            Error::InvalidArgument("kernel has no serializable specification".into())
        })?;
        Ok(SourceModelFile {
            sources: self.sources.iter().map(SphericalPoint::coords).collect(),
            weight_cov: (0..self.n_sources())
                .map(|i| self.weight_cov.row(i).iter().copied().collect())
                .collect(),
            kernel,
        })
    }

    pub fn from_file(file: &SourceModelFile) -> Result<Self> {
        let q = file.sources.len();
        let sources = file
            .sources
            .iter()
            .map(|c| SphericalPoint::from_vector(c[0], c[1], c[2]))
            .collect::<Result<Vec<_>>>()?;
        if file.weight_cov.len() != q || file.weight_cov.iter().any(|row| row.len() != q) {
            return Err(Error::DimensionMismatch { expected: q, got: file.weight_cov.len() });
        }
        let cov = DMatrix::from_fn(q, q, |i, j| file.weight_cov[i][j]);
        Self::new(sources, cov, file.kernel.build()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file()?)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: SourceModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

/// `X(u) = sum_q xi_q psi(<u, v_q>)`.
pub fn eval_field(weights: &[f64], model: &SourceModel, u: &SphericalPoint) -> Result<f64> {
    if weights.len() != model.n_sources() {
        return Err(Error::DimensionMismatch { expected: model.n_sources(), got: weights.len() });
    }
    Ok(model
        .sources
        .iter()
        .zip(weights)
        .map(|(v, xi)| xi * model.kernel.eval(dot(u, v)))
        .sum())
}

/// `R(u, v) = sum_{p,q} R_pq psi(<u, v_p>) psi(<v, v_q>)`.
pub fn true_second_moment(model: &SourceModel, u: &SphericalPoint, v: &SphericalPoint) -> f64 {
    let fu = model.features(u);
    let fv = model.features(v);
    fu.dot(&(&model.weight_cov * fv))
}

/// A factor `F` with `F F^T = cov`: Cholesky, or eigendecomposition with
/// negative eigenvalues above `-1e-12 trace` clipped to zero.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let floor = -PSD_REL_TOL * cov.trace().abs().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < floor {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

fn gaussian_vector<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_iterator(factor.ncols(), (0..factor.ncols()).map(|_| rng.sample(StandardNormal)));
    factor * z
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. weight vectors `xi_i ~ N(0, R)`, one per replicate.
pub fn draw_iid_weights(model: &SourceModel, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::EmptyInput("n must be at least 1"));
    }
    let factor = psd_factor(&model.weight_cov)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| gaussian_vector(&factor, &mut stream_rng(seed, WEIGHT_STREAM + i as u64)))
        .collect())
}

/// Stationary AR(1) weights `xi_{t+1} = a xi_t + sqrt(1 - a^2) eta_t`, `eta_t ~ N(0, R)`,
/// started from the stationary law, so that `Cov(xi_{t+h}, xi_t) = a^|h| R`.
pub fn draw_far1_weights(
    model: &SourceModel,
    n: usize,
    a: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::EmptyInput("n must be at least 1"));
    }
    if !(a.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "AR coefficient must satisfy |a| < 1 for a stationary process, got {a}"
        )));
    }
    let factor = psd_factor(&model.weight_cov)?;
    let mut rng = stream_rng(seed, AR_STREAM);
    let innovation_scale = (1.0 - a * a).sqrt();
    let mut out = Vec::with_capacity(n);
    out.push(gaussian_vector(&factor, &mut rng));
    for t in 1..n {
        let eta = gaussian_vector(&factor, &mut rng);
        let next = &out[t - 1] * a + eta * innovation_scale;
        out.push(next);
    }
    Ok(out)
}

/// Samples `r` uniform locations per replicate and noisy values
/// `W_ij = X_i(U_ij) + eps_ij`, `eps_ij ~ N(0, sigma^2)`.
///
/// Noise draws are consumed even when `sigma = 0`, so the same seed gives the
/// same locations and field values for every noise level.
pub fn sample_dataset(
    model: &SourceModel,
    weights: &[DVector<f64>],
    r: usize,
    sigma: f64,
    seed: u64,
    time_ordered: bool,
) -> Result<Dataset> {
    if r == 0 {
        return Err(Error::EmptyInput("r must be at least 1"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be >= 0, got {sigma}")));
    }
    let replicates = weights
        .par_iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut rng = stream_rng(seed, i as u64);
            let locations: Vec<SphericalPoint> =
                (0..r).map(|_| sample_uniform_with(&mut rng)).collect();
            let values = locations
                .iter()
                .map(|u| {
                    let noise: f64 = rng.sample(StandardNormal);
                    model.features(u).dot(xi) + sigma * noise
                })
                .collect();
            Replicate { locations, values }
        })
        .collect();
    Ok(Dataset::new(replicates, sigma, time_ordered)?.with_seed(seed))
}

/// `n` i.i.d. replicates with `r` noisy samples each.
pub fn simulate_dataset(
    model: &SourceModel,
    n: usize,
    r: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    let weights = draw_iid_weights(model, n, seed)?;
    sample_dataset(model, &weights, r, sigma, seed, false)
}

/// Time-ordered replicates driven by stationary AR(1) weights.
pub fn simulate_far1(
    model: &SourceModel,
    n: usize,
    r: usize,
    sigma: f64,
    a: f64,
    seed: u64,
) -> Result<Dataset> {
    let weights = draw_far1_weights(model, n, a, seed)?;
    sample_dataset(model, &weights, r, sigma, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::matern_zonal;

    fn model() -> SourceModel {
        SourceModel::reference(matern_zonal(2.5, 0.4).unwrap(), 42).unwrap()
    }

    #[test]
    fn reference_matrix_is_psd() {
        let m = model();
        assert_eq!(m.n_sources(), 5);
        assert!(m.weight_cov().clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn model_validation() {
        let k = matern_zonal(2.5, 0.4).unwrap();
        let pts = sample_uniform_sphere(2, 1).unwrap();
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SourceModel::new(pts.clone(), asym, k.clone()).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SourceModel::new(pts.clone(), indefinite, k.clone()),
            Err(Error::NotPsd { .. })
        ));
        let dup = vec![pts[0], pts[0]];
        assert!(SourceModel::new(dup, DMatrix::identity(2, 2), k.clone()).is_err());
        assert!(SourceModel::new(vec![], DMatrix::zeros(0, 0), k).is_err());
    }

    #[test]
    fn field_evaluation() {
        let m = model();
        let u = sample_uniform_sphere(1, 3).unwrap()[0];
        assert_eq!(eval_field(&[0.0; 5], &m, &u).unwrap(), 0.0);
        assert!(eval_field(&[0.0; 4], &m, &u).is_err());

        let single = SourceModel::new(
            vec![u],
            DMatrix::identity(1, 1),
            matern_zonal(2.5, 0.4).unwrap(),
        )
        .unwrap();
        assert!((eval_field(&[1.0], &single, &u).unwrap() - 1.0).abs() < 1e-6);

        let xi = [0.3, -1.2, 0.7, 0.05, 2.0];
        let pts = sample_uniform_sphere(20, 8).unwrap();
        let k = matern_zonal(2.5, 0.4).unwrap();
        for p in &pts {
            let mut brute = 0.0;
            for (q, v) in m.sources().iter().enumerate() {
                let t = p.x() * v.x() + p.y() * v.y() + p.z() * v.z();
                brute += xi[q] * k.eval(t.clamp(-1.0, 1.0));
            }
            assert!((eval_field(&xi, &m, p).unwrap() - brute).abs() < 1e-14);
        }
    }

    #[test]
    fn second_moment_zero_and_symmetric() {
        let m = model();
        let zero = SourceModel::new(
            m.sources().to_vec(),
            DMatrix::zeros(5, 5),
            m.kernel().clone(),
        )
        .unwrap();
        let pts = sample_uniform_sphere(200, 4).unwrap();
        for pair in pts.chunks(2) {
            assert_eq!(true_second_moment(&zero, &pair[0], &pair[1]), 0.0);
            let a = true_second_moment(&m, &pair[0], &pair[1]);
            let b = true_second_moment(&m, &pair[1], &pair[0]);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn factor_fallback_clips_semidefinite() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let cov = &v * v.transpose();
        let f = psd_factor(&cov).unwrap();
        assert!((&f * f.transpose() - &cov).abs().max() < 1e-12);
    }

    #[test]
    fn noiseless_values_are_field_values() {
        let m = model();
        let weights = draw_iid_weights(&m, 4, 9).unwrap();
        let ds = sample_dataset(&m, &weights, 6, 0.0, 9, false).unwrap();
        for (rep, xi) in ds.replicates().iter().zip(&weights) {
            for (u, w) in rep.locations.iter().zip(&rep.values) {
                assert_eq!(*w, eval_field(xi.as_slice(), &m, u).unwrap());
            }
        }
    }

    #[test]
    fn reference_configuration_size() {
        let ds = simulate_dataset(&model(), 64, 12, 0.1, 1).unwrap();
        assert_eq!(ds.total_samples(), 768);
        assert_eq!(ds.constant_r(), Some(12));
        assert!(!ds.time_ordered());
    }

    #[test]
    fn reproducible() {
        let a = simulate_far1(&model(), 10, 5, 0.1, 0.3, 77).unwrap();
        let b = simulate_far1(&model(), 10, 5, 0.1, 0.3, 77).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert!(a.time_ordered());
    }

    #[test]
    fn far1_rejects_unit_root() {
        assert!(simulate_far1(&model(), 10, 5, 0.1, 1.0, 1).is_err());
        assert!(simulate_far1(&model(), 10, 5, 0.1, -1.2, 1).is_err());
    }

    #[test]
    fn monte_carlo_moments() {
        let m = model();
        let pts = sample_uniform_sphere(2, 5).unwrap();
        let (u, v) = (pts[0], pts[1]);
        let n = 20_000;
        let iid = draw_iid_weights(&m, n, 3).unwrap();
        let far = draw_far1_weights(&m, n, 0.6, 3).unwrap();
        let fu = m.features(&u);
        let fv = m.features(&v);
        let x = |xi: &DVector<f64>, f: &DVector<f64>| xi.dot(f);
        let truth = true_second_moment(&m, &u, &v);
        let scale = (true_second_moment(&m, &u, &u) * true_second_moment(&m, &v, &v)).sqrt();

        let emp: f64 = iid.iter().map(|xi| x(xi, &fu) * x(xi, &fv)).sum::<f64>() / n as f64;
        assert!((emp - truth).abs() < 4.0 * scale * (2.0 / n as f64).sqrt());
        let mean: f64 = iid.iter().map(|xi| x(xi, &fu)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * true_second_moment(&m, &u, &u).sqrt() / (n as f64).sqrt());

        let lag1: f64 = (0..n - 1)
            .map(|t| x(&far[t + 1], &fu) * x(&far[t], &fv))
            .sum::<f64>()
            / (n - 1) as f64;
        // AR(1) sums decorrelate slower: inflate the band by (1 + a) / (1 - a).
        let band = 4.0 * scale * (2.0 * 4.0 / n as f64).sqrt();
        assert!((lag1 - 0.6 * truth).abs() < band, "{lag1} vs {}", 0.6 * truth);
    }
}
