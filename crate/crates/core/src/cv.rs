//! K-fold cross-validation of the second-moment penalty over pair products.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimate::{pair_products, solve_fast, PreparedGram};
use crate::gram::{KhatriRaoOperator, PairLayout};
use crate::kernel::ZonalKernel;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVConfig {
    pub k_folds: usize,
    /// Penalties in non-decreasing order.
    pub eta_grid: Vec<f64>,
    pub shuffle_seed: u64,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self { k_folds: 4, eta_grid: linspace(1.0, 6.0, 11), shuffle_seed: 0 }
    }
}

/// `count` equispaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![a],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// `count` log-spaced points on `[a, b]`, `0 < a <= b`.
pub fn logspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), count).into_iter().map(f64::exp).collect()
}

impl CVConfig {
    pub fn validate(&self, pairs: usize) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.k_folds
            )));
        }
        if self.k_folds > pairs {
            return Err(Error::InvalidArgument(format!(
                "{} folds exceed the {pairs} available pairs",
                self.k_folds
            )));
        }
        if self.eta_grid.is_empty() {
            return Err(Error::InvalidArgument("penalty grid is empty".into()));
        }
        if let Some(e) = self.eta_grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument(format!("penalties must be > 0, got {e}")));
        }
        if self.eta_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("penalty grid must be non-decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub eta_grid: Vec<f64>,
    /// Mean held-out MSE per penalty over the folds that succeeded.
    pub scores: Vec<f64>,
    pub selected_eta: f64,
    /// `per_fold[e][f]`: score of fold `f` at penalty `e`, `None` on failure.
    pub per_fold: Vec<Vec<Option<f64>>>,
    pub seed: u64,
    pub k_folds: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CVReport {
    /// Index of the selected penalty.
    pub fn selected_index(&self) -> usize {
        self.eta_grid.iter().position(|&e| e == self.selected_eta).unwrap_or(0)
    }

    /// True when the minimizer is neither the first nor the last grid value.
    pub fn is_interior(&self) -> bool {
        let first = self.eta_grid[0];
        let last = *self.eta_grid.last().unwrap();
        self.selected_eta != first && self.selected_eta != last
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "eta,score")?;
        for (e, s) in self.eta_grid.iter().zip(&self.scores) {
            writeln!(out, "{e:e},{s:e}")?;
        }
        Ok(())
    }
}

/// Fold index of every pair: a seeded permutation cut into `k` consecutive
/// groups, the first `L mod k` of which get one extra pair.
pub fn fold_assignment(pairs: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..pairs).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (base, extra) = (pairs / k, pairs % k);
    let mut fold = vec![0; pairs];
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &p in &perm[pos..pos + size] {
            fold[p] = f;
        }
        pos += size;
    }
    fold
}

/// Scores every penalty by k-fold cross-validation on the pair products
/// `z_l = w_ij w_ik`: each fold's pairs are removed from the system (with the
/// full-data ridge), the model is fitted on the rest and scored by the mean
/// squared error `z_l - R(U_ij, U_ik)` on the removed pairs.
pub fn kfold_cv_second_moment(
    dataset: &Dataset,
    kernel: &ZonalKernel,
    cfg: &CVConfig,
    solver: &SolverConfig,
) -> Result<CVReport> {
    solver.validate()?;
    dataset.require_pairs()?;
    let gram = PreparedGram::new(dataset, kernel, solver.threshold)?;
    kfold_cv_prepared(dataset, &gram, cfg, solver)
}

/// Cross-validation on a prepared Gram.
pub fn kfold_cv_prepared(
    dataset: &Dataset,
    gram: &PreparedGram,
    cfg: &CVConfig,
    solver: &SolverConfig,
) -> Result<CVReport> {
    let z = pair_products(dataset);
    let pairs = z.len();
    cfg.validate(pairs)?;
    let fold = fold_assignment(pairs, cfg.k_folds, cfg.shuffle_seed);
    let layout = PairLayout::OffDiagonal;
    let full = KhatriRaoOperator::new(&gram.blocks, layout, 0.0)?;

    let per_fold_by_fold: Vec<(Vec<Option<f64>>, Vec<String>)> = (0..cfg.k_folds)
        .into_par_iter()
        .map(|f| {
            let mask: Vec<bool> = fold.iter().map(|&g| g != f).collect();
            let z_train: Vec<f64> =
                z.iter().zip(&mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
            let held: Vec<usize> = (0..pairs).filter(|&l| !mask[l]).collect();
            let mut scores = Vec::with_capacity(cfg.eta_grid.len());
            let mut warnings = Vec::new();
            let mut warm: Option<Vec<f64>> = None;
            let mut pred = vec![0.0; pairs];
            for (e, &eta) in cfg.eta_grid.iter().enumerate() {
                if e > 0 && cfg.eta_grid[e - 1] == eta {
                    scores.push(scores[e - 1]);
                    continue;
                }
                let fit = solve_fast(
                    gram,
                    layout,
                    &z_train,
                    eta,
                    solver,
                    Some(&mask),
                    warm.as_deref(),
                );
                match fit {
                    Ok((beta, _, _)) => {
                        full.apply_gram(&beta, &mut pred);
                        let mse = held.iter().map(|&l| (z[l] - pred[l]).powi(2)).sum::<f64>()
                            / held.len() as f64;
                        if mse.is_finite() {
                            scores.push(Some(mse));
                        } else {
                            warnings.push(format!("fold {f}, eta {eta}: non-finite score"));
                            scores.push(None);
                        }
                        warm = Some(beta);
                    }
                    Err(err) => {
                        warnings.push(format!("fold {f}, eta {eta}: {err}"));
                        scores.push(None);
                    }
                }
            }
            (scores, warnings)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut per_fold = vec![Vec::with_capacity(cfg.k_folds); cfg.eta_grid.len()];
    for (scores, w) in per_fold_by_fold {
        warnings.extend(w);
        for (e, s) in scores.into_iter().enumerate() {
            per_fold[e].push(s);
        }
    }
    let mut means = Vec::with_capacity(cfg.eta_grid.len());
    for (e, row) in per_fold.iter().enumerate() {
        let ok: Vec<f64> = row.iter().flatten().copied().collect();
        if ok.is_empty() {
            return Err(Error::CrossValidation(format!(
                "every fold failed at eta = {}: {}",
                cfg.eta_grid[e],
                warnings.join("; ")
            )));
        }
        means.push(ok.iter().sum::<f64>() / ok.len() as f64);
    }
    let mut best = 0;
    for (e, &s) in means.iter().enumerate() {
        if s < means[best] {
            best = e;
        }
    }
    Ok(CVReport {
        eta_grid: cfg.eta_grid.clone(),
        scores: means,
        selected_eta: cfg.eta_grid[best],
        per_fold,
        seed: cfg.shuffle_seed,
        k_folds: cfg.k_folds,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{simulate_dataset, SourceModel};
    use crate::kernel::matern_zonal;

    fn data() -> (Dataset, ZonalKernel) {
        let k = matern_zonal(2.5, 0.4).unwrap();
        let m = SourceModel::reference(k.clone(), 2).unwrap();
        (simulate_dataset(&m, 8, 5, 0.1, 2).unwrap(), k)
    }

    #[test]
    fn folds_partition_pairs() {
        let fold = fold_assignment(103, 4, 9);
        let mut sizes = [0usize; 4];
        for &f in &fold {
            sizes[f] += 1;
        }
        assert_eq!(sizes, [26, 26, 26, 25]);
        assert_eq!(fold, fold_assignment(103, 4, 9));
        assert_ne!(fold, fold_assignment(103, 4, 10));
    }

    #[test]
    fn config_validation() {
        let bad = |c: CVConfig| c.validate(100).is_err();
        assert!(bad(CVConfig { k_folds: 1, ..Default::default() }));
        assert!(bad(CVConfig { k_folds: 101, ..Default::default() }));
        assert!(bad(CVConfig { eta_grid: vec![], ..Default::default() }));
        assert!(bad(CVConfig { eta_grid: vec![2.0, 1.0], ..Default::default() }));
        assert!(bad(CVConfig { eta_grid: vec![0.0, 1.0], ..Default::default() }));
        assert!(CVConfig::default().validate(100).is_ok());
        assert_eq!(CVConfig::default().eta_grid.len(), 11);
        assert!((logspace(0.01, 1.0, 3)[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn singleton_grid_and_duplicates() {
        let (ds, k) = data();
        let solver = SolverConfig::default();
        let single = CVConfig { eta_grid: vec![0.3], ..Default::default() };
        let rep = kfold_cv_second_moment(&ds, &k, &single, &solver).unwrap();
        assert_eq!(rep.selected_eta, 0.3);
        let dup = CVConfig { eta_grid: vec![0.1, 0.5, 0.5, 2.0], ..Default::default() };
        let rep = kfold_cv_second_moment(&ds, &k, &dup, &solver).unwrap();
        assert!((rep.scores[1] - rep.scores[2]).abs() <= 1e-12);
        assert_eq!(rep.per_fold.len(), 4);
        assert!(rep.per_fold.iter().all(|f| f.len() == 4 && f.iter().all(Option::is_some)));
    }

    #[test]
    fn deterministic_and_minimal() {
        let (ds, k) = data();
        let cfg = CVConfig { eta_grid: logspace(0.01, 10.0, 5), k_folds: 3, shuffle_seed: 4 };
        let a = kfold_cv_second_moment(&ds, &k, &cfg, &SolverConfig::default()).unwrap();
        let b = kfold_cv_second_moment(&ds, &k, &cfg, &SolverConfig::default()).unwrap();
        assert_eq!(a, b);
        let best = a.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.scores[a.selected_index()], best);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
        let json = serde_json::to_value(&a).unwrap();
        for key in ["eta_grid", "scores", "selected_eta", "per_fold", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn masked_fit_matches_reduced_dense_system() {
        use crate::gram::{build_h_sparse, build_j, VectorizationSpec};
        use crate::solver::{conjugate_gradient, LinearOperator};
        use nalgebra::{DMatrix, DVector};
        let (ds, k) = data();
        let cfg = SolverConfig { tol: 1e-12, ..Default::default() };
        let gram = PreparedGram::new(&ds, &k, cfg.threshold).unwrap();
        let z = pair_products(&ds);
        let fold = fold_assignment(z.len(), 4, 1);
        let mask: Vec<bool> = fold.iter().map(|&f| f != 2).collect();
        let zt: Vec<f64> = z.iter().zip(&mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
        let (beta, _, _) =
            solve_fast(&gram, PairLayout::OffDiagonal, &zt, 0.5, &cfg, Some(&mask), None).unwrap();
        let locs: Vec<_> = ds.replicates().iter().map(|r| r.locations.clone()).collect();
        let h = build_h_sparse(
            &build_j(&locs, &k, cfg.threshold).unwrap(),
            &VectorizationSpec::new(8, 5).unwrap(),
        )
        .unwrap()
        .to_dense();
        let keep: Vec<usize> = (0..z.len()).filter(|&l| mask[l]).collect();
        let ridge = crate::estimate::fast_ridge(0.5, z.len());
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
            h[(keep[a], keep[b])] + if a == b { ridge } else { 0.0 }
        });
        let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&l| z[l]));
        let direct = conjugate_gradient(&sub, rhs.as_slice(), None, &cfg).unwrap().x;
        assert!(sub.dim() == keep.len());
        for (a, &l) in keep.iter().enumerate() {
            assert!((beta[l] - direct[a]).abs() <= 1e-9 * direct[a].abs().max(1e-2));
        }
        assert!((0..z.len()).filter(|&l| !mask[l]).all(|l| beta[l] == 0.0));
    }
}
