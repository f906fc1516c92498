//! Shared fixtures for the criterion benches under `benches/`.

use spherecov::kernel::matern_zonal;
use spherecov::{simulate_dataset, Dataset, SourceModel, ZonalKernel};

/// Matérn(5/2, 0.4), the default experiment kernel.
pub fn default_kernel() -> ZonalKernel {
    matern_zonal(2.5, 0.4).expect("valid Matérn parameters")
}

/// Five-source reference dataset with `r = 12`, `sigma = 0.1`.
pub fn reference_dataset(n: usize, seed: u64) -> Dataset {
    let model = SourceModel::reference(default_kernel(), seed).expect("reference model");
    simulate_dataset(&model, n, 12, 0.1, seed).expect("simulation")
}
