//! Replicate-indexed point samples and their CSV/JSON file formats.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::SphericalPoint;

/// Samples of one replicate (one field realization, or one time step).
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub locations: Vec<SphericalPoint>,
    pub values: Vec<f64>,
}

impl Replicate {
    pub fn len(&self) -> usize {
        self.locations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    replicates: Vec<Replicate>,
    noise_sd: f64,
    time_ordered: bool,
    seed: Option<u64>,
}

/// Sidecar metadata: `{n, r_list, sigma, seed, time_ordered}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub r_list: Vec<usize>,
    pub sigma: f64,
    pub seed: Option<u64>,
    pub time_ordered: bool,
}

impl Dataset {
    pub fn new(replicates: Vec<Replicate>, noise_sd: f64, time_ordered: bool) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::InvalidDataset("no replicates".into()));
        }
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return Err(Error::InvalidDataset(format!("noise sd must be >= 0, got {noise_sd}")));
        }
        for (i, rep) in replicates.iter().enumerate() {
            if rep.locations.len() != rep.values.len() {
                return Err(Error::InvalidDataset(format!(
                    "replicate {i}: {} locations but {} values",
                    rep.locations.len(),
                    rep.values.len()
                )));
            }
            if rep.is_empty() {
                return Err(Error::InvalidDataset(format!("replicate {i} has no samples")));
            }
            if let Some(v) = rep.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("replicate {i}: non-finite value {v}")));
            }
            for a in 0..rep.len() {
                for b in 0..a {
                    if rep.locations[a] == rep.locations[b] {
                        return Err(Error::InvalidDataset(format!(
                            "replicate {i}: samples {b} and {a} share a location"
                        )));
                    }
                }
            }
        }
        Ok(Self { replicates, noise_sd, time_ordered, seed: None })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn replicates(&self) -> &[Replicate] {
        &self.replicates
    }
    pub fn n(&self) -> usize {
        self.replicates.len()
    }
    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }
    pub fn time_ordered(&self) -> bool {
        self.time_ordered
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn r_list(&self) -> Vec<usize> {
        self.replicates.iter().map(Replicate::len).collect()
    }
    pub fn total_samples(&self) -> usize {
        self.replicates.iter().map(Replicate::len).sum()
    }

    /// Common sample count, if every replicate has the same one.
    pub fn constant_r(&self) -> Option<usize> {
        let r = self.replicates[0].len();
        self.replicates.iter().all(|rep| rep.len() == r).then_some(r)
    }

    /// Number of ordered off-diagonal pairs `sum r_i (r_i - 1)`.
    pub fn pair_count(&self) -> usize {
        self.replicates.iter().map(|rep| rep.len() * (rep.len() - 1)).sum()
    }

    /// Errors unless every replicate has at least two samples.
    pub fn require_pairs(&self) -> Result<()> {
        match self.replicates.iter().position(|rep| rep.len() < 2) {
            Some(i) => Err(Error::InvalidDataset(format!(
                "replicate {i} has fewer than 2 samples; second-moment fitting needs r_i >= 2"
            ))),
            None => Ok(()),
        }
    }

    /// All sample locations, replicate-major.
    pub fn locations(&self) -> Vec<SphericalPoint> {
        self.replicates.iter().flat_map(|r| r.locations.iter().copied()).collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n: self.n(),
            r_list: self.r_list(),
            sigma: self.noise_sd,
            seed: self.seed,
            time_ordered: self.time_ordered,
        }
    }

    /// Writes `replicate,x,y,z,w` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "replicate,x,y,z,w")?;
        for (i, rep) in self.replicates.iter().enumerate() {
            for (p, v) in rep.locations.iter().zip(&rep.values) {
                writeln!(w, "{i},{:.16e},{:.16e},{:.16e},{:.16e}", p.x(), p.y(), p.z(), v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `replicate,x,y,z,w` rows. Replicate ids must be contiguous from 0.
    pub fn read_csv<R: std::io::Read>(input: R, meta: Option<&DatasetMeta>) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut replicates: Vec<Replicate> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("replicate")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("line {}: expected 5 fields", lineno + 1)));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let nums: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let point = SphericalPoint::new(nums[0], nums[1], nums[2])
                .or_else(|_| SphericalPoint::from_vector(nums[0], nums[1], nums[2]))?;
            if id == replicates.len() {
                replicates.push(Replicate { locations: Vec::new(), values: Vec::new() });
            } else if id + 1 != replicates.len() {
                return Err(Error::Parse(format!(
                    "line {}: replicate ids must be contiguous and sorted",
                    lineno + 1
                )));
            }
            let rep = replicates.last_mut().expect("pushed above");
            rep.locations.push(point);
            rep.values.push(nums[3]);
        }
        let (sigma, time_ordered, seed) = match meta {
            Some(m) => (m.sigma, m.time_ordered, m.seed),
            None => (0.0, false, None),
        };
        let mut ds = Dataset::new(replicates, sigma, time_ordered)?;
        ds.seed = seed;
        if let Some(m) = meta {
            if m.n != ds.n() || m.r_list != ds.r_list() {
                return Err(Error::InvalidDataset(
                    "metadata sidecar does not match the sample file".into(),
                ));
            }
        }
        Ok(ds)
    }

    /// Writes the CSV file and its JSON sidecar.
    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(csv_path)?)?;
        fs::write(meta_path, serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }

    /// Loads a dataset; the sidecar is optional.
    pub fn load(csv_path: &Path, meta_path: Option<&Path>) -> Result<Self> {
        let meta = match meta_path {
            Some(p) => Some(serde_json::from_str::<DatasetMeta>(&fs::read_to_string(p)?)?),
            None => None,
        };
        Self::read_csv(fs::File::open(csv_path)?, meta.as_ref())
    }
}
