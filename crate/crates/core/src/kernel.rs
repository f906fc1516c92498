//! Admissible spectral operators on the sphere and their zonal Green's kernels.
//!
//! An operator acts diagonally on spherical harmonics with coefficients `D_l`.
//! The kernel used by every estimator is the Green's kernel of `D* D`,
//!
//! ```text
//! psi(t) = sum_l (2l + 1) / (4 pi) * P_l(t) / D_l^2,
//! ```
//!
//! either as a truncated Legendre series or, for Matérn kernels, in closed form.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Default truncation degree for series kernels.
pub const DEFAULT_L_MAX: usize = 256;

/// Largest allowed spread `C2 / C1` of `|D_l| / (1 + l)^p` over the stored range.
const MAX_RATIO_SPREAD: f64 = 1e4;

/// Relative truncation tolerance for Green's kernel series.
const TAIL_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    coeffs: Vec<f64>,
    growth_order: f64,
}

impl SpectralOperator {
    /// `coeffs[l] = D_l` for `l = 0..=L_max`.
    pub fn new(coeffs: Vec<f64>, growth_order: f64) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidArgument("operator needs L_max >= 1".into()));
        }
        if !(growth_order.is_finite() && growth_order >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "growth order must be >= 0, got {growth_order}"
            )));
        }
        if let Some(l) = coeffs.iter().position(|d| !d.is_finite() || *d == 0.0) {
            return Err(Error::NotAdmissible(format!("D_{l} = {} is zero or not finite", coeffs[l])));
        }
        let op = Self { coeffs, growth_order };
        let (c1, c2) = op.admissibility_bounds();
        if c2 / c1 > MAX_RATIO_SPREAD {
            return Err(Error::NotAdmissible(format!(
                "|D_l|/(1+l)^p ranges over [{c1:.3e}, {c2:.3e}]; p = {growth_order} does not match the coefficient growth"
            )));
        }
        Ok(op)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    pub fn growth_order(&self) -> f64 {
        self.growth_order
    }
    pub fn l_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Empirical `(C1, C2)` with `C1 (1+l)^p <= |D_l| <= C2 (1+l)^p` on the stored range.
    pub fn admissibility_bounds(&self) -> (f64, f64) {
        self.coeffs.iter().enumerate().fold((f64::INFINITY, 0.0f64), |(lo, hi), (l, d)| {
            let r = d.abs() / (1.0 + l as f64).powf(self.growth_order);
            (lo.min(r), hi.max(r))
        })
    }
}

/// Sobolev operator `(Id - Laplacian)^{p/2}`, with `D_l = (1 + l(l+1))^{p/2}`.
pub fn sobolev_operator(p: f64, l_max: usize) -> Result<SpectralOperator> {
    if !(p > 1.0) {
        return Err(Error::NotRkhs(p));
    }
    if l_max == 0 {
        return Err(Error::InvalidArgument("L_max must be positive".into()));
    }
    let coeffs = (0..=l_max)
        .map(|l| {
            let lf = l as f64;
            (1.0 + lf * (lf + 1.0)).powf(p / 2.0)
        })
        .collect();
    SpectralOperator::new(coeffs, p)
}

/// Matérn smoothness values with a closed-form kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternSmoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternSmoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        const TOL: f64 = 1e-12;
        if (nu - 0.5).abs() < TOL {
            Ok(Self::Half)
        } else if (nu - 1.5).abs() < TOL {
            Ok(Self::ThreeHalves)
        } else if (nu - 2.5).abs() < TOL {
            Ok(Self::FiveHalves)
        } else {
            Err(Error::UnsupportedSmoothness(nu))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }

    /// Matérn function `S(s)` at distance `s >= 0`, scale `eps`.
    #[inline]
    fn eval(self, s: f64, eps: f64) -> f64 {
        match self {
            Self::Half => (-s / eps).exp(),
            Self::ThreeHalves => {
                let a = 3f64.sqrt() * s / eps;
                (1.0 + a) * (-a).exp()
            }
            Self::FiveHalves => {
                let a = 5f64.sqrt() * s / eps;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }
}

/// Serializable description of a kernel: `{"kind": "sobolev", "p": .., "L_max": ..}`
/// or `{"kind": "matern", "nu": .., "eps": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Sobolev {
        p: f64,
        #[serde(rename = "L_max", default = "default_l_max")]
        l_max: usize,
    },
    Matern {
        nu: f64,
        eps: f64,
    },
}

fn default_l_max() -> usize {
    DEFAULT_L_MAX
}

impl KernelSpec {
    pub fn build(&self) -> Result<ZonalKernel> {
        match *self {
            KernelSpec::Sobolev { p, l_max } => {
                let mut k = green_kernel_dstar_d(&sobolev_operator(p, l_max)?)?;
                k.spec = Some(*self);
                Ok(k)
            }
            KernelSpec::Matern { nu, eps } => matern_zonal(nu, eps),
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Matern { nu: 2.5, eps: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    SeriesTruncated,
    ClosedFormMatern,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Series {
        /// `(2l+1)/(4 pi) * c_l`
        weights: Vec<f64>,
        coeffs: Vec<f64>,
        tail_bound: f64,
    },
    Matern {
        smoothness: MaternSmoothness,
        eps: f64,
    },
}

/// A function of `t = <u, v>` on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalKernel {
    repr: Repr,
    growth_order: f64,
    spec: Option<KernelSpec>,
}

impl ZonalKernel {
    /// Kernel from spectral coefficients `c_l` (`psi = sum (2l+1)/(4pi) c_l P_l`).
    pub fn from_spectral(coeffs: Vec<f64>, growth_order: f64, tail_bound: f64) -> Self {
        let weights = coeffs
            .iter()
            .enumerate()
            .map(|(l, c)| (2.0 * l as f64 + 1.0) / (4.0 * PI) * c)
            .collect();
        Self {
            repr: Repr::Series { weights, coeffs, tail_bound },
            growth_order,
            spec: None,
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!((-1.0..=1.0).contains(&t));
        match &self.repr {
            Repr::Matern { smoothness, eps } => {
                let s = (2.0 - 2.0 * t).max(0.0).sqrt();
                smoothness.eval(s, *eps)
            }
            Repr::Series { weights, .. } => legendre_series(weights, t),
        }
    }

    /// `psi(1)`, the value on the diagonal.
    pub fn at_one(&self) -> f64 {
        self.eval(1.0)
    }

    pub fn kind(&self) -> KernelKind {
        match self.repr {
            Repr::Series { .. } => KernelKind::SeriesTruncated,
            Repr::Matern { .. } => KernelKind::ClosedFormMatern,
        }
    }

    /// Spectral growth order `p` of the associated operator (metadata for Matérn).
    pub fn growth_order(&self) -> f64 {
        self.growth_order
    }

    /// Upper bound on the truncated series tail; zero for closed forms.
    pub fn truncation_tail(&self) -> f64 {
        match self.repr {
            Repr::Series { tail_bound, .. } => tail_bound,
            Repr::Matern { .. } => 0.0,
        }
    }

    /// Stored spectral coefficients `c_l` for series kernels.
    pub fn series_coeffs(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Series { coeffs, .. } => Some(coeffs),
            Repr::Matern { .. } => None,
        }
    }

    pub fn spec(&self) -> Option<KernelSpec> {
        self.spec
    }
}

#[inline]
fn legendre_series(weights: &[f64], t: f64) -> f64 {
    let mut sum = weights[0];
    if weights.len() == 1 {
        return sum;
    }
    let (mut p_prev, mut p) = (1.0, t);
    sum += weights[1] * p;
    for (k, w) in weights.iter().enumerate().skip(2) {
        let kf = (k - 1) as f64;
        let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        sum += w * p;
    }
    sum
}

/// Bound on `sum_{l > L} (2l+1)/(4 pi) |D_l|^{-power}` from `|D_l| >= C1 (1+l)^p`.
fn tail_bound(op: &SpectralOperator, power: f64) -> f64 {
    let (c1, _) = op.admissibility_bounds();
    let p = op.growth_order();
    let exponent = power * p - 1.0; // terms behave like 2 (1+l)^{1 - power p}
    if exponent <= 1.0 {
        return f64::INFINITY;
    }
    let l = op.l_max() as f64;
    2.0 / (4.0 * PI * c1.powf(power)) * (1.0 + l).powf(1.0 - exponent) / (exponent - 1.0)
}

fn green_from_power(op: &SpectralOperator, power: i32) -> Result<ZonalKernel> {
    let coeffs: Vec<f64> = op.coeffs().iter().map(|d| d.powi(-power)).collect();
    let tail = tail_bound(op, power as f64);
    let kernel = ZonalKernel::from_spectral(coeffs, op.growth_order(), tail);
    let allowed = TAIL_REL_TOL * kernel.at_one().abs();
    if !(tail <= allowed) {
        return Err(Error::InsufficientTruncation { l_max: op.l_max(), tail, allowed });
    }
    Ok(kernel)
}

/// Zonal Green's kernel of `D* D`: spectral coefficients `1 / D_l^2`.
pub fn green_kernel_dstar_d(op: &SpectralOperator) -> Result<ZonalKernel> {
    green_from_power(op, 2)
}

/// Zonal Green's kernel of `D` itself: spectral coefficients `1 / D_l`.
pub fn green_kernel_d(op: &SpectralOperator) -> Result<ZonalKernel> {
    green_from_power(op, 1)
}

/// Spherical Matérn kernel `psi(t) = S_nu^eps(sqrt(2 - 2t))` in closed form.
pub fn matern_zonal(nu: f64, eps: f64) -> Result<ZonalKernel> {
    let smoothness = MaternSmoothness::from_nu(nu)?;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("Matérn scale must be > 0, got {eps}")));
    }
    Ok(ZonalKernel {
        repr: Repr::Matern { smoothness, eps },
        growth_order: 2.0 * (smoothness.nu() + 1.0),
        spec: Some(KernelSpec::Matern { nu: smoothness.nu(), eps }),
    })
}

/// Fourier–Legendre coefficients `c_l = 2 pi int_{-1}^{1} psi(t) P_l(t) dt`, `l = 0..=l_max`.
///
/// The integral is taken in the angle `theta` (`t = cos theta`) so that the
/// `sqrt(1 - t)` behaviour of closed-form kernels at `t = 1` does not slow down
/// convergence. Coefficients below `-1e-12 max|c|` mean the kernel is not
/// positive definite and yield an error; values that are zero within that
/// tolerance are accepted.
pub fn zonal_spectral_coeffs(kernel: &ZonalKernel, l_max: usize) -> Result<Vec<f64>> {
    if l_max == 0 {
        return Err(Error::InvalidArgument("L_max must be positive".into()));
    }
    let n_nodes = 4 * (l_max + 1) + 64;
    let (x, w) = gauss_legendre(n_nodes);
    let mut coeffs = vec![0.0; l_max + 1];
    for (xi, wi) in x.iter().zip(&w) {
        let theta = 0.5 * PI * (xi + 1.0);
        let t = theta.cos();
        let f = 2.0 * PI * wi * 0.5 * PI * theta.sin() * kernel.eval(t.clamp(-1.0, 1.0));
        let (mut p_prev, mut p) = (1.0, t);
        coeffs[0] += f;
        if l_max >= 1 {
            coeffs[1] += f * t;
        }
        for (l, c) in coeffs.iter_mut().enumerate().skip(2) {
            let kf = (l - 1) as f64;
            let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
            p_prev = p;
            p = next;
            *c += f * p;
        }
    }
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if let Some((degree, value)) =
        coeffs.iter().enumerate().find(|(_, c)| **c < -1e-12 * scale)
    {
        return Err(Error::NotPositiveDefinite { degree, value: *value });
    }
    Ok(coeffs)
}
