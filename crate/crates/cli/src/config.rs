//! Command arguments. Every option can also come from a JSON file given with
//! `--config`; flags take precedence over the file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use spherecov::KernelSpec;

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "{e}"),
            ConfigError::Invalid(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError::Invalid(msg.into()).into()
}

/// Fails with an I/O error unless `path` exists.
pub fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} `{}` not found", path.display()),
        ))
        .into())
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(ConfigError::Io)?;
    serde_json::from_str(&text)
        .map_err(|e| invalid(format!("config file `{}`: {e}", path.display())))
}

macro_rules! merge_options {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.take(); } )*
    };
}

/// Kernel flags shared by the commands that build a kernel.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct KernelArgs {
    /// Matérn smoothness (0.5, 1.5 or 2.5).
    #[arg(long)]
    pub nu: Option<f64>,
    /// Matérn scale.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Use the Sobolev Green's kernel of order p instead of Matérn.
    #[arg(long)]
    pub sobolev_p: Option<f64>,
    /// Series truncation degree for the Sobolev kernel.
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Full kernel specification (config file only).
    #[arg(skip)]
    pub kernel: Option<KernelSpec>,
}

impl KernelArgs {
    fn merge(&mut self, mut o: KernelArgs) {
        merge_options!(self, o; nu, eps, sobolev_p, l_max, kernel);
    }

    pub fn spec(&self) -> KernelSpec {
        if let Some(p) = self.sobolev_p {
            return KernelSpec::Sobolev { p, l_max: self.l_max.unwrap_or(spherecov::kernel::DEFAULT_L_MAX) };
        }
        match (self.kernel, self.nu, self.eps) {
            (Some(KernelSpec::Matern { nu, eps }), a, b) => {
                KernelSpec::Matern { nu: a.unwrap_or(nu), eps: b.unwrap_or(eps) }
            }
            (Some(k @ KernelSpec::Sobolev { .. }), None, None) => k,
            (_, a, b) => KernelSpec::Matern { nu: a.unwrap_or(2.5), eps: b.unwrap_or(0.4) },
        }
    }
}

/// Solver flags shared by `fit` and `cv`.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct SolverArgs {
    /// Relative residual target of conjugate gradients.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (default 10 sqrt(L)).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Kernel values below threshold * psi(1) are dropped from the Gram matrix.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl SolverArgs {
    fn merge(&mut self, mut o: SolverArgs) {
        merge_options!(self, o; tol, max_iter, threshold);
    }

    pub fn config(&self) -> spherecov::SolverConfig {
        let d = spherecov::SolverConfig::default();
        spherecov::SolverConfig {
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.or(d.max_iter),
            threshold: self.threshold.unwrap_or(d.threshold),
        }
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct SimulateArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory (data.csv, data.json, model.json).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of replicates.
    #[arg(long)]
    pub n: Option<usize>,
    /// Samples per replicate.
    #[arg(long)]
    pub r: Option<usize>,
    /// Measurement noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source model JSON; default is five random sources with the reference covariance.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Number of sources of the default model (only 5 has a reference covariance).
    #[arg(long)]
    pub sources: Option<usize>,
    /// Simulate a stationary functional AR(1) with this coefficient.
    #[arg(long)]
    pub far1: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
}

impl SimulateArgs {
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: SimulateArgs = read_config(&path)?;
            merge_options!(self, file; out_dir, n, r, sigma, seed, model, sources, far1);
            self.kernel.merge(std::mem::take(&mut file.kernel));
        }
        Ok(self)
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct FitArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (`replicate,x,y,z,w`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metadata sidecar; defaults to the dataset path with a .json extension, if present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Output directory (second_moment.csv, mean.csv, report.json).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Second-moment penalty.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Mean penalty; default (n r)^(-p/(p+1)) for growth order p.
    #[arg(long)]
    pub mean_eta: Option<f64>,
    /// Autocovariance lag; 0 fits the second moment.
    #[arg(long, allow_hyphen_values = true)]
    pub lag: Option<i64>,
    /// Skip the mean fit.
    #[arg(long)]
    pub no_mean: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
}

impl FitArgs {
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: FitArgs = read_config(&path)?;
            merge_options!(self, file; data, meta, out_dir, eta, mean_eta, lag);
            self.no_mean |= file.no_mean;
            self.kernel.merge(std::mem::take(&mut file.kernel));
            self.solver.merge(std::mem::take(&mut file.solver));
        }
        Ok(self)
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct CvArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (`replicate,x,y,z,w`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metadata sidecar; defaults to the dataset path with a .json extension, if present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Output directory (cv.json, cv.csv).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Explicit penalty grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eta_grid: Option<Vec<f64>>,
    /// Smallest grid penalty.
    #[arg(long)]
    pub eta_min: Option<f64>,
    /// Largest grid penalty.
    #[arg(long)]
    pub eta_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    pub eta_count: Option<usize>,
    /// Log-spaced instead of equispaced grid.
    #[arg(long)]
    pub log_grid: bool,
    /// Fold shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
}

impl CvArgs {
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: CvArgs = read_config(&path)?;
            merge_options!(self, file; data, meta, out_dir, folds, eta_grid, eta_min, eta_max, eta_count, seed);
            self.log_grid |= file.log_grid;
            self.kernel.merge(std::mem::take(&mut file.kernel));
            self.solver.merge(std::mem::take(&mut file.solver));
        }
        Ok(self)
    }

    pub fn grid(&self) -> anyhow::Result<Vec<f64>> {
        if let Some(g) = &self.eta_grid {
            return Ok(g.clone());
        }
        let (a, b) = (self.eta_min.unwrap_or(1.0), self.eta_max.unwrap_or(6.0));
        let count = self.eta_count.unwrap_or(11);
        if !(a > 0.0 && b >= a) {
            return Err(invalid(format!("need 0 < eta_min <= eta_max, got [{a}, {b}]")));
        }
        Ok(if self.log_grid {
            spherecov::cv::logspace(a, b, count)
        } else {
            spherecov::cv::linspace(a, b, count)
        })
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Estimate file written by `fit` (second moment or mean).
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Mean estimate; with a second-moment estimate the covariance is evaluated.
    #[arg(long)]
    pub mean: Option<PathBuf>,
    /// Source model JSON; adds the L2 error against the true field to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Number of Fibonacci grid nodes.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Project the bivariate field onto the positive semidefinite cone.
    #[arg(long)]
    pub project_psd: bool,
    /// Output directory (nodes.csv, values.csv, eval.json).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl EvalArgs {
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(path) = self.config.clone() {
            let mut file: EvalArgs = read_config(&path)?;
            merge_options!(self, file; estimate, mean, truth, grid, out_dir);
            self.project_psd |= file.project_psd;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kernel_is_matern() {
        let k = KernelArgs::default().spec();
        assert_eq!(k, KernelSpec::Matern { nu: 2.5, eps: 0.4 });
    }

    #[test]
    fn sobolev_flag_takes_precedence() {
        let args = KernelArgs { sobolev_p: Some(3.0), nu: Some(1.5), ..Default::default() };
        assert!(matches!(args.spec(), KernelSpec::Sobolev { p, .. } if p == 3.0));
    }

    #[test]
    fn flags_override_file_kernel() {
        let args = KernelArgs {
            kernel: Some(KernelSpec::Matern { nu: 1.5, eps: 0.2 }),
            eps: Some(0.3),
            ..Default::default()
        };
        assert_eq!(args.spec(), KernelSpec::Matern { nu: 1.5, eps: 0.3 });
    }

    #[test]
    fn grid_variants() {
        let cv = CvArgs::default();
        let g = cv.grid().unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10]), (1.0, 6.0));

        let cv = CvArgs { eta_min: Some(0.01), eta_max: Some(1.0), eta_count: Some(3), log_grid: true, ..Default::default() };
        let g = cv.grid().unwrap();
        assert!((g[1] - 0.1).abs() < 1e-12);

        let cv = CvArgs { eta_grid: Some(vec![2.0]), ..Default::default() };
        assert_eq!(cv.grid().unwrap(), vec![2.0]);

        let cv = CvArgs { eta_min: Some(3.0), eta_max: Some(1.0), ..Default::default() };
        assert!(cv.grid().is_err());
    }

    #[test]
    fn config_file_fills_unset_options() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.json");
        fs::write(&path, r#"{"eta": 3.0, "lag": 2, "tol": 1e-6, "nu": 1.5}"#).unwrap();
        let args = FitArgs { config: Some(path), eta: Some(1.0), ..Default::default() }
            .resolve()
            .unwrap();
        assert_eq!(args.eta, Some(1.0));
        assert_eq!(args.lag, Some(2));
        assert_eq!(args.solver.config().tol, 1e-6);
        assert_eq!(args.kernel.spec(), KernelSpec::Matern { nu: 1.5, eps: 0.4 });
    }

    #[test]
    fn malformed_config_is_invalid() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.json");
        fs::write(&path, "{not json").unwrap();
        let err = FitArgs { config: Some(path), ..Default::default() }.resolve().unwrap_err();
        assert!(matches!(err.downcast_ref::<ConfigError>(), Some(ConfigError::Invalid(_))));
    }
}
