use spherecov::estimate::dense_rhs;
use spherecov::gram::build_h_general;
use spherecov::kernel::matern_zonal;
use spherecov::postprocess::l2_norm;
use spherecov::{
    eval_on_grid, eval_second_moment, fibonacci_grid, fit_second_moment, simulate_dataset, SolverConfig,
    SourceModel,
};

#[test]
fn ridge_shrinks_the_estimate() {
    let kernel = matern_zonal(2.5, 0.4).unwrap();
    let model = SourceModel::reference(kernel.clone(), 3).unwrap();
    let ds = simulate_dataset(&model, 16, 8, 0.1, 3).unwrap();
    let grid = fibonacci_grid(200).unwrap();
    let cfg = SolverConfig { tol: 1e-10, ..SolverConfig::default() };
    let mut last = f64::INFINITY;
    for eta in [0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0] {
        let est = fit_second_moment(&ds, &kernel, eta, &cfg).unwrap();
        let norm = l2_norm(&eval_on_grid(&est, &grid).unwrap());
        assert!(norm <= last + 1e-10, "eta {eta}: norm {norm} grew from {last}");
        last = norm;
    }
}

#[test]
fn doubling_the_data_products_doubles_the_fit() {
    let kernel = matern_zonal(2.5, 0.4).unwrap();
    let model = SourceModel::reference(kernel.clone(), 4).unwrap();
    let ds = simulate_dataset(&model, 6, 5, 0.1, 4).unwrap();
    // Scaling every value by sqrt(2) doubles every product w_ij w_ik.
    let scaled = {
        let reps = ds
            .replicates()
            .iter()
            .map(|r| spherecov::Replicate {
                locations: r.locations.clone(),
                values: r.values.iter().map(|w| w * 2f64.sqrt()).collect(),
            })
            .collect();
        spherecov::Dataset::new(reps, ds.noise_sd(), false).unwrap()
    };
    let cfg = SolverConfig { tol: 1e-13, ..SolverConfig::default() };
    let a = fit_second_moment(&ds, &kernel, 1.0, &cfg).unwrap();
    let b = fit_second_moment(&scaled, &kernel, 1.0, &cfg).unwrap();
    for (x, y) in a.beta().iter().zip(b.beta()) {
        assert!((2.0 * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
    }
    let u = ds.replicates()[0].locations[0];
    let v = ds.replicates()[1].locations[2];
    let ra = eval_second_moment(&a, &u, &v);
    let rb = eval_second_moment(&b, &u, &v);
    assert!((2.0 * ra - rb).abs() <= 1e-9 * rb.abs().max(1.0));
}

#[test]
fn ragged_dense_system_is_symmetric_psd() {
    let kernel = matern_zonal(2.5, 0.4).unwrap();
    let model = SourceModel::reference(kernel.clone(), 5).unwrap();
    let mut reps = Vec::new();
    for (i, r) in [2usize, 4, 3].into_iter().enumerate() {
        let ds = simulate_dataset(&model, 1, r, 0.1, 40 + i as u64).unwrap();
        reps.push(ds.replicates()[0].clone());
    }
    let ds = spherecov::Dataset::new(reps, 0.1, false).unwrap();
    let h = build_h_general(&ds, &kernel).unwrap();
    assert_eq!(h.nrows(), 2 + 12 + 6);
    assert!((&h - h.transpose()).amax() < 1e-14);
    let min = h.clone().symmetric_eigen().eigenvalues.min();
    assert!(min > -1e-12 * h.amax());
    assert_eq!(dense_rhs(&ds).len(), h.nrows());
    let est = fit_second_moment(&ds, &kernel, 1.0, &SolverConfig::default()).unwrap();
    let (u, v) = (ds.replicates()[1].locations[0], ds.replicates()[2].locations[1]);
    let d = (eval_second_moment(&est, &u, &v) - eval_second_moment(&est, &v, &u)).abs();
    assert!(d <= 1e-10);
}
