//! Legendre polynomials and real orthonormal spherical harmonics.
//!
//! Harmonics use the unit-L² normalization on the sphere without the
//! Condon–Shortley phase: `Y_{0,0} = 1/sqrt(4 pi)`, `Y_{l,m}` for `m > 0`
//! carries `cos(m phi)` and for `m < 0` carries `sin(|m| phi)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::SphericalPoint;

/// Largest degree accepted by [`HarmonicIndex`].
pub const MAX_DEGREE: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarmonicIndex {
    degree: usize,
    order: i64,
}

impl HarmonicIndex {
    pub fn new(degree: usize, order: i64) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if order.unsigned_abs() as usize > degree {
            return Err(Error::InvalidArgument(format!(
                "order {order} not in [-{degree}, {degree}]"
            )));
        }
        Ok(Self { degree, order })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn order(&self) -> i64 {
        self.order
    }

    /// Position in the flat `l^2 + l + m` layout used by [`real_sph_harm_all`].
    pub fn flat(&self) -> usize {
        ((self.degree * self.degree + self.degree) as i64 + self.order) as usize
    }
}

fn check_domain(t: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain { value: t });
    }
    Ok(())
}

/// Legendre polynomial `P_l(t)` by upward three-term recurrence.
pub fn legendre_p(l: usize, t: f64) -> Result<f64> {
    check_domain(t)?;
    Ok(legendre_unchecked(l, t))
}

#[inline]
pub(crate) fn legendre_unchecked(l: usize, t: f64) -> f64 {
    if l == 0 {
        return 1.0;
    }
    let (mut p_prev, mut p) = (1.0, t);
    for k in 1..l {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    p
}

/// `[P_0(t), ..., P_{l_max}(t)]`.
pub fn legendre_all(l_max: usize, t: f64) -> Result<Vec<f64>> {
    check_domain(t)?;
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(1.0);
    if l_max >= 1 {
        out.push(t);
    }
    for k in 1..l_max {
        let kf = k as f64;
        out.push(((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0));
    }
    Ok(out)
}

/// Normalized associated Legendre values `Ptilde_{l,m}(cos theta)` for one order `m`
/// and all degrees `m..=l_max`, so that `Ptilde_{l,m} e^{i m phi}` is orthonormal on
/// the sphere.
fn assoc_legendre_column(l_max: usize, m: usize, cos_t: f64, sin_t: f64) -> Vec<f64> {
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * sin_t;
    }
    let mut col = Vec::with_capacity(l_max + 1 - m);
    col.push(pmm);
    if l_max == m {
        return col;
    }
    col.push((2.0 * m as f64 + 3.0).sqrt() * cos_t * pmm);
    let mf = m as f64;
    let a = |l: f64| ((4.0 * l * l - 1.0) / (l * l - mf * mf)).sqrt();
    for l in (m + 2)..=l_max {
        let lf = l as f64;
        let idx = l - m;
        let v = a(lf) * (cos_t * col[idx - 1] - col[idx - 2] / a(lf - 1.0));
        col.push(v);
    }
    col
}

fn trig(u: &SphericalPoint) -> (f64, f64, f64) {
    let rho = (u.x() * u.x() + u.y() * u.y()).sqrt();
    let phi = if rho > 0.0 { u.y().atan2(u.x()) } else { 0.0 };
    (u.z().clamp(-1.0, 1.0), rho, phi)
}

/// Real orthonormal spherical harmonic `Y_{l,m}(u)`.
pub fn real_sph_harm(idx: HarmonicIndex, u: &SphericalPoint) -> f64 {
    let (cos_t, sin_t, phi) = trig(u);
    let m = idx.order.unsigned_abs() as usize;
    let p = *assoc_legendre_column(idx.degree, m, cos_t, sin_t)
        .last()
        .expect("column holds degree l");
    match idx.order {
        0 => p,
        o if o > 0 => std::f64::consts::SQRT_2 * p * (m as f64 * phi).cos(),
        _ => std::f64::consts::SQRT_2 * p * (m as f64 * phi).sin(),
    }
}

/// All real harmonics up to `l_max`, laid out as `l^2 + l + m`.
pub fn real_sph_harm_all(l_max: usize, u: &SphericalPoint) -> Vec<f64> {
    let (cos_t, sin_t, phi) = trig(u);
    let mut out = vec![0.0; (l_max + 1) * (l_max + 1)];
    for m in 0..=l_max {
        let col = assoc_legendre_column(l_max, m, cos_t, sin_t);
        let (s, c) = (m as f64 * phi).sin_cos();
        for (off, p) in col.iter().enumerate() {
            let l = m + off;
            let base = l * l + l;
            if m == 0 {
                out[base] = *p;
            } else {
                out[base + m] = std::f64::consts::SQRT_2 * p * c;
                out[base - m] = std::f64::consts::SQRT_2 * p * s;
            }
        }
    }
    out
}

/// `sum_{m=-l}^{l} Y_{l,m}(u) Y_{l,m}(v)`, computed directly from the harmonics.
pub fn addition_theorem_sum(l: usize, u: &SphericalPoint, v: &SphericalPoint) -> f64 {
    let (cu, su, pu) = trig(u);
    let (cv, sv, pv) = trig(v);
    let mut total = 0.0;
    for m in 0..=l {
        let a = *assoc_legendre_column(l, m, cu, su).last().unwrap();
        let b = *assoc_legendre_column(l, m, cv, sv).last().unwrap();
        if m == 0 {
            total += a * b;
        } else {
            let mf = m as f64;
            // cos(m pu)cos(m pv) + sin(m pu)sin(m pv)
            total += 2.0 * a * b * (mf * (pu - pv)).cos();
        }
    }
    total
}
