//! Points on the unit sphere, uniform sampling and quasi-uniform grids.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-12;

/// A unit vector in R^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    x: f64,
    y: f64,
    z: f64,
}

impl SphericalPoint {
    /// Builds a point from coordinates that are already unit-norm (within 1e-12).
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm2 = x * x + y * y + z * z;
        if !norm2.is_finite() || (norm2 - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!(
                "({x}, {y}, {z}) is not a unit vector (|p|^2 = {norm2})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Projects an arbitrary nonzero vector onto the sphere.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize ({x}, {y}, {z})"
            )));
        }
        Ok(Self::normalized_unchecked(x / norm, y / norm, z / norm))
    }

    /// Colatitude `theta` in [0, pi], longitude `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self::normalized_unchecked(st * cp, st * sp, ct)
    }

    // One Newton step on the norm brings float noise below the invariant tolerance.
    fn normalized_unchecked(x: f64, y: f64, z: f64) -> Self {
        let n2 = x * x + y * y + z * z;
        let s = 1.5 - 0.5 * n2;
        Self { x: x * s, y: y * s, z: z * s }
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Inner product clamped to [-1, 1].
    #[inline]
    pub fn dot(&self, other: &SphericalPoint) -> f64 {
        dot(self, other)
    }

    /// Geodesic distance in radians.
    pub fn angle_to(&self, other: &SphericalPoint) -> f64 {
        // atan2 form is accurate for nearly coincident and nearly antipodal points.
        let cx = self.y * other.z - self.z * other.y;
        let cy = self.z * other.x - self.x * other.z;
        let cz = self.x * other.y - self.y * other.x;
        let cross = (cx * cx + cy * cy + cz * cz).sqrt();
        let d = self.x * other.x + self.y * other.y + self.z * other.z;
        cross.atan2(d)
    }

    /// Colatitude in [0, pi] and longitude in (-pi, pi].
    pub fn to_angles(&self) -> (f64, f64) {
        (self.z.clamp(-1.0, 1.0).acos(), self.y.atan2(self.x))
    }

    pub fn antipode(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }
}

/// Inner product of two unit vectors, clamped to [-1, 1].
#[inline]
pub fn dot(u: &SphericalPoint, v: &SphericalPoint) -> f64 {
    (u.x * v.x + u.y * v.y + u.z * v.z).clamp(-1.0, 1.0)
}

/// Draws one uniform point from a caller-owned RNG (normalized Gaussian vector).
pub fn sample_uniform_with<R: Rng + ?Sized>(rng: &mut R) -> SphericalPoint {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let n = (x * x + y * y + z * z).sqrt();
        if n > 1e-300 {
            return SphericalPoint::normalized_unchecked(x / n, y / n, z / n);
        }
    }
}

/// `count` i.i.d. uniform points on the sphere, deterministic in `seed`.
pub fn sample_uniform_sphere(count: usize, seed: u64) -> Result<Vec<SphericalPoint>> {
    if count == 0 {
        return Err(Error::EmptyInput("sample count must be at least 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sample_uniform_with(&mut rng)).collect())
}

/// Quadrature nodes and weights on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    nodes: Vec<SphericalPoint>,
    weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(nodes: Vec<SphericalPoint>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput("grid has no nodes"));
        }
        if nodes.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: nodes.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("grid weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 4.0 * PI).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "grid weights sum to {total}, expected 4*pi"
            )));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[SphericalPoint] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature of a function sampled at the nodes.
    pub fn integrate<F: Fn(&SphericalPoint) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Spherical Fibonacci lattice with equal weights `4*pi / n_nodes`.
pub fn fibonacci_grid(n_nodes: usize) -> Result<SphereGrid> {
    if n_nodes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a Fibonacci grid needs at least 2 nodes, got {n_nodes}"
        )));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let nf = n_nodes as f64;
    let nodes = (0..n_nodes)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / nf;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            let (s, c) = phi.sin_cos();
            SphericalPoint::normalized_unchecked(rho * c, rho * s, z)
        })
        .collect();
    let w = 4.0 * PI / nf;
    let weights = vec![w; n_nodes];
    SphereGrid::new(nodes, weights)
}
