use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use spherecov::cv::{kfold_cv_second_moment, CVConfig, CVReport};
use spherecov::estimate::{
    fit_lag_autocov, fit_mean, FitDiagnostics, MeanEstimate, SecondMomentEstimate,
};
use spherecov::field::{simulate_dataset, simulate_far1, SourceModel};
use spherecov::postprocess::{
    covariance_on_grid, eval_on_grid, l2_error, l2_norm, project_psd, truth_on_grid, GridField,
    PsdReport,
};
use spherecov::{fibonacci_grid, Dataset, KernelSpec};

use crate::config::{invalid, require_file, CvArgs, EvalArgs, FitArgs, SimulateArgs};
use crate::outputs::Outputs;

const PSD_TOL: f64 = 1e-10;
const DEFAULT_GRID: usize = 400;

fn out_dir(dir: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    dir.clone().ok_or_else(|| invalid("--out-dir is required"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(data: &Option<PathBuf>, meta: &Option<PathBuf>) -> anyhow::Result<Dataset> {
    let data = data.clone().ok_or_else(|| invalid("--data is required"))?;
    require_file(&data, "dataset")?;
    let meta = match meta {
        Some(m) => {
            require_file(m, "metadata file")?;
            Some(m.clone())
        }
        None => Some(data.with_extension("json")).filter(|p| p.is_file()),
    };
    Ok(Dataset::load(&data, meta.as_deref())?)
}

#[derive(Serialize)]
struct SimulateReport {
    n: usize,
    r: usize,
    sigma: f64,
    seed: u64,
    far1: Option<f64>,
    sources: usize,
    kernel: KernelSpec,
    samples: usize,
}

pub fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let args = args.resolve()?;
    let dir = out_dir(&args.out_dir)?;
    let n = args.n.unwrap_or(64);
    let r = args.r.unwrap_or(12);
    let sigma = args.sigma.unwrap_or(0.1);
    let seed = args.seed.unwrap_or(0);
    if n == 0 || r == 0 {
        return Err(invalid("n and r must be at least 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if let Some(a) = args.far1 {
        if !(a.abs() < 1.0) {
            return Err(invalid(format!("--far1 needs |a| < 1, got {a}")));
        }
    }
    let model = match &args.model {
        Some(path) => {
            require_file(path, "model file")?;
            SourceModel::load(path)?
        }
        None => {
            if let Some(q) = args.sources.filter(|&q| q != 5) {
                return Err(invalid(format!(
                    "the default model has 5 sources; supply --model for Q = {q}"
                )));
            }
            SourceModel::reference(args.kernel.spec().build()?, seed)?
        }
    };
    let ds = match args.far1 {
        Some(a) => simulate_far1(&model, n, r, sigma, a, seed)?,
        None => simulate_dataset(&model, n, r, sigma, seed)?,
    };
    let mut outputs = Outputs::new(&dir)?;
    let (csv, meta) = (outputs.path(&dir, "data.csv"), outputs.path(&dir, "data.json"));
    ds.save(&csv, &meta)?;
    model.save(&outputs.path(&dir, "model.json"))?;
    let report = SimulateReport {
        n,
        r,
        sigma,
        seed,
        far1: args.far1,
        sources: model.n_sources(),
        kernel: model.kernel().spec().expect("built from a spec"),
        samples: ds.total_samples(),
    };
    write_json(&outputs.path(&dir, "simulate.json"), &report)?;
    outputs.commit();
    println!("wrote {} samples ({n} replicates x {r}) to {}", ds.total_samples(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    kernel: KernelSpec,
    n: usize,
    r_list: Vec<usize>,
    data_seed: Option<u64>,
    eta: f64,
    lag: i64,
    mean_eta: Option<f64>,
    mean_warning: Option<String>,
    diagnostics: Option<FitDiagnostics>,
    mean_seconds: Option<f64>,
    total_seconds: f64,
}

/// `(n r)^(-p / (p + 1))` with `n r` the total sample count.
fn default_mean_eta(samples: usize, p: f64) -> f64 {
    (samples as f64).powf(-p / (p + 1.0))
}

pub fn fit(args: FitArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let args = args.resolve()?;
    let dir = out_dir(&args.out_dir)?;
    let solver = args.solver.config();
    solver.validate()?;
    let eta = args.eta.unwrap_or(2.363);
    let lag = args.lag.unwrap_or(0);
    let spec = args.kernel.spec();
    let kernel = spec.build()?;
    let ds = load_dataset(&args.data, &args.meta)?;
    let mean_eta = (!args.no_mean)
        .then(|| args.mean_eta.unwrap_or_else(|| default_mean_eta(ds.total_samples(), kernel.growth_order())));

    let r_est = fit_lag_autocov(&ds, &kernel, eta, lag, &solver)?;
    let t = Instant::now();
    let m_est = mean_eta.map(|e| fit_mean(&ds, &kernel, e)).transpose()?;
    let mean_seconds = m_est.as_ref().map(|_| t.elapsed().as_secs_f64());

    let mut outputs = Outputs::new(&dir)?;
    r_est.save(&outputs.path(&dir, "second_moment.csv"))?;
    if let Some(m) = &m_est {
        m.save(&outputs.path(&dir, "mean.csv"))?;
    }
    let report = FitReport {
        kernel: spec,
        n: ds.n(),
        r_list: ds.r_list(),
        data_seed: ds.seed(),
        eta,
        lag,
        mean_eta,
        mean_warning: m_est.as_ref().and_then(|m| m.warning().map(str::to_owned)),
        diagnostics: r_est.diagnostics().cloned(),
        mean_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&outputs.path(&dir, "report.json"), &report)?;
    outputs.commit();
    if let Some(d) = r_est.diagnostics() {
        let nnz = d.j_nnz_fraction.map_or("-".into(), |f| format!("{:.1}%", 100.0 * f));
        println!(
            "fit lag {lag}: {} pairs, {} CG iterations, residual {:.2e}, J nnz {nnz}",
            d.dim, d.iterations, d.rel_residual
        );
    }
    Ok(())
}

pub fn cv(args: CvArgs) -> anyhow::Result<()> {
    let args = args.resolve()?;
    let dir = out_dir(&args.out_dir)?;
    let solver = args.solver.config();
    solver.validate()?;
    let cfg = CVConfig {
        k_folds: args.folds.unwrap_or(4),
        eta_grid: args.grid()?,
        shuffle_seed: args.seed.unwrap_or(0),
    };
    if cfg.k_folds < 2 {
        return Err(invalid(format!("--folds must be at least 2, got {}", cfg.k_folds)));
    }
    let kernel = args.kernel.spec().build()?;
    let ds = load_dataset(&args.data, &args.meta)?;
    let report: CVReport = kfold_cv_second_moment(&ds, &kernel, &cfg, &solver)?;
    let mut outputs = Outputs::new(&dir)?;
    write_json(&outputs.path(&dir, "cv.json"), &report)?;
    report.write_csv(fs::File::create(outputs.path(&dir, "cv.csv"))?)?;
    outputs.commit();
    println!(
        "selected eta = {} ({} minimizer)",
        report.selected_eta,
        if report.is_interior() { "interior" } else { "boundary" }
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    estimate: String,
    kind: &'static str,
    grid_nodes: usize,
    l2_norm: f64,
    l2_error: Option<f64>,
    l2_error_unprojected: Option<f64>,
    psd: Option<PsdReport>,
}

enum Loaded {
    Mean(MeanEstimate),
    SecondMoment(SecondMomentEstimate),
}

fn load_estimate(path: &Path) -> anyhow::Result<Loaded> {
    match SecondMomentEstimate::load(path) {
        Ok(e) => Ok(Loaded::SecondMoment(e)),
        Err(first) => MeanEstimate::load(path)
            .map(Loaded::Mean)
            .map_err(|_| anyhow::Error::from(first))
            .with_context(|| format!("reading estimate {}", path.display())),
    }
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let args = args.resolve()?;
    let dir = out_dir(&args.out_dir)?;
    let est_path = args.estimate.clone().ok_or_else(|| invalid("--estimate is required"))?;
    require_file(&est_path, "estimate")?;
    for (p, what) in [(&args.mean, "mean estimate"), (&args.truth, "model file")] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    let nodes = args.grid.unwrap_or(DEFAULT_GRID);
    let grid = fibonacci_grid(nodes)?;
    let estimate = load_estimate(&est_path)?;
    let truth = args.truth.as_deref().map(SourceModel::load).transpose()?;

    let (kind, field) = match &estimate {
        Loaded::Mean(m) => {
            if args.project_psd {
                return Err(invalid("--project-psd needs a second-moment estimate"));
            }
            ("mean", eval_on_grid(m, &grid)?)
        }
        Loaded::SecondMoment(r) => match &args.mean {
            Some(mp) => ("covariance", covariance_on_grid(r, &MeanEstimate::load(mp)?, &grid)?),
            None if r.lag() == 0 => ("second-moment", eval_on_grid(r, &grid)?),
            None => ("lag-autocovariance", eval_on_grid(r, &grid)?),
        },
    };
    // Simulated fields are centred: truth is the model's second moment (or zero mean).
    let truth_field = match (&truth, &estimate) {
        (Some(model), Loaded::SecondMoment(r)) if r.lag() == 0 => Some(truth_on_grid(model, &grid)?),
        (Some(_), Loaded::Mean(_)) => {
            Some(GridField::univariate(grid.clone(), nalgebra_zero(grid.len()))?)
        }
        (Some(_), _) => {
            return Err(invalid("--truth is only available for lag-0 and mean estimates"));
        }
        (None, _) => None,
    };
    let unprojected_err = truth_field.as_ref().map(|t| l2_error(&field, t)).transpose()?;
    let (field, psd) = if args.project_psd {
        let (p, rep) = project_psd(&field, PSD_TOL)?;
        (p, Some(rep))
    } else {
        (field, None)
    };
    let err = truth_field.as_ref().map(|t| l2_error(&field, t)).transpose()?;

    let mut outputs = Outputs::new(&dir)?;
    let (np, vp) = (outputs.path(&dir, "nodes.csv"), outputs.path(&dir, "values.csv"));
    field.save(&np, &vp)?;
    let report = EvalReport {
        estimate: est_path.display().to_string(),
        kind,
        grid_nodes: nodes,
        l2_norm: l2_norm(&field),
        l2_error: err,
        l2_error_unprojected: if args.project_psd { unprojected_err } else { None },
        psd,
    };
    write_json(&outputs.path(&dir, "eval.json"), &report)?;
    outputs.commit();
    print!("{kind} on {nodes} nodes: L2 norm {:.4e}", report.l2_norm);
    if let Some(e) = err {
        print!(", L2 error {e:.4e}");
    }
    if let Some(p) = psd {
        print!(", clipped mass {:.4e}", p.clipped_mass);
    }
    println!();
    Ok(())
}

fn nalgebra_zero(n: usize) -> spherecov::postprocess::Vector {
    spherecov::postprocess::Vector::zeros(n)
}
