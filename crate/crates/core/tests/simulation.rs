use nalgebra::{DMatrix, DVector};
use spherecov::field::{draw_far1_weights, draw_iid_weights, eval_field, sample_dataset};
use spherecov::kernel::matern_zonal;
use spherecov::sphere::sample_uniform_sphere;
use spherecov::{simulate_dataset, SourceModel};
use statrs::distribution::{ContinuousCDF, Normal};

fn model() -> SourceModel {
    SourceModel::reference(matern_zonal(2.5, 0.4).unwrap(), 21).unwrap()
}

fn empirical_cov(xs: &[DVector<f64>], lag: usize) -> DMatrix<f64> {
    let q = xs[0].len();
    let n = xs.len() - lag;
    let mut c = DMatrix::zeros(q, q);
    for t in 0..n {
        c += &xs[t + lag] * xs[t].transpose();
    }
    c / n as f64
}

#[test]
fn noise_variance_matches_sigma() {
    let m = model();
    let sigma = 0.1;
    let weights = draw_iid_weights(&m, 10_000, 5).unwrap();
    let ds = sample_dataset(&m, &weights, 10, sigma, 5, false).unwrap();
    let mut resid = Vec::with_capacity(100_000);
    for (rep, xi) in ds.replicates().iter().zip(&weights) {
        for (u, w) in rep.locations.iter().zip(&rep.values) {
            resid.push(w - eval_field(xi.as_slice(), &m, u).unwrap());
        }
    }
    assert_eq!(resid.len(), 100_000);
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "noise variance {var}");
}

#[test]
fn weight_marginals_are_gaussian() {
    let m = model();
    let n = 10_000;
    let weights = draw_iid_weights(&m, n, 8).unwrap();
    // Two-sided Kolmogorov-Smirnov critical value at the 0.1% level.
    let critical = (-(0.0005f64).ln() / 2.0).sqrt() / (n as f64).sqrt();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    for q in 0..m.n_sources() {
        let sd = m.weight_cov()[(q, q)].sqrt();
        let mut xs: Vec<f64> = weights.iter().map(|xi| xi[q] / sd).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = std_normal.cdf(x);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "source {q}: KS statistic {d} >= {critical}");
    }
}

#[test]
fn far1_marginal_and_lag_structure() {
    let m = model();
    let a = 0.5;
    let weights = draw_far1_weights(&m, 10_000, a, 2).unwrap();
    let c0 = empirical_cov(&weights, 0);
    let c1 = empirical_cov(&weights, 1);
    let truth = m.weight_cov();
    let rel = (&c0 - truth).norm() / truth.norm();
    assert!(rel < 0.05, "marginal covariance off by {rel}");
    let ratio = c1.trace() / c0.trace();
    assert!((ratio - a).abs() < 0.05, "lag-1 ratio {ratio}");
}

#[test]
fn far1_with_zero_coefficient_is_iid() {
    let m = model();
    let weights = draw_far1_weights(&m, 10_000, 0.0, 4).unwrap();
    let c0 = empirical_cov(&weights, 0);
    let c1 = empirical_cov(&weights, 1);
    assert!((&c0 - m.weight_cov()).norm() / m.weight_cov().norm() < 0.05);
    assert!(c1.trace().abs() / c0.trace() < 0.05);
}

#[test]
fn field_is_lipschitz_in_angle() {
    let m = model();
    let kernel = m.kernel();
    // Angular Lipschitz constant of the kernel profile from a dense sweep.
    let steps = 200_000;
    let h = std::f64::consts::PI / steps as f64;
    let lip_psi = (0..steps)
        .map(|i| {
            let t = i as f64 * h;
            (kernel.eval((t + h).cos()) - kernel.eval(t.cos())).abs() / h
        })
        .fold(0.0, f64::max)
        * 1.01;
    let weights = draw_iid_weights(&m, 20, 6).unwrap();
    let pts = sample_uniform_sphere(2000, 13).unwrap();
    let mut checked = 0;
    for (i, xi) in weights.iter().enumerate() {
        let c = xi.iter().map(|w| w.abs()).sum::<f64>() * lip_psi;
        for k in 0..50 {
            let (u, v) = (pts[(i * 100 + 2 * k) % 2000], pts[(i * 100 + 2 * k + 1) % 2000]);
            let dx = (eval_field(xi.as_slice(), &m, &u).unwrap()
                - eval_field(xi.as_slice(), &m, &v).unwrap())
            .abs();
            assert!(dx <= c * u.angle_to(&v) + 1e-12, "pair ({i}, {k}) violates the bound");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn simulation_is_reproducible() {
    let m = model();
    let a = simulate_dataset(&m, 12, 6, 0.1, 99).unwrap();
    let b = simulate_dataset(&m, 12, 6, 0.1, 99).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    let c = simulate_dataset(&m, 12, 6, 0.1, 100).unwrap();
    assert_ne!(a, c);
}
