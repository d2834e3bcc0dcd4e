//! On-disk datasets: a cross-network plus diffusion samples and metadata.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! meta.json
//! source.edges  target.edges  bridges.tsv  [source_features.csv]
//! sample_{i}_x_s.csv  sample_{i}_y_s.csv  sample_{i}_x_t.csv  sample_{i}_y_t.csv
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionConfig, DiffusionSample};
use crate::error::{Error, Result};
use crate::graph::{read_vector_csv, write_vector_csv, CrossNetwork, InfectionVector, SeedVector};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// `cross-platform`, `toy` or `g2s`.
    pub kind: String,
    /// Pattern label such as `LT2IC`; empty for agent-simulated data.
    pub diffusion: String,
    pub source_config: Option<DiffusionConfig>,
    pub target_config: Option<DiffusionConfig>,
    pub n_samples: usize,
    /// The last `test_samples` samples form the test split.
    pub test_samples: usize,
    pub seed_fraction: Option<f64>,
    pub rng_seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_bridges: usize,
    pub source_role: String,
    pub target_role: String,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Generator parameters not covered above.
    #[serde(default)]
    pub generator: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub cross: CrossNetwork,
    pub samples: Vec<DiffusionSample>,
}

/// Default held-out count: a tenth of the samples, at least one.
pub fn default_test_samples(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 10).max(1)
    }
}

fn sample_path(dir: &Path, i: usize, part: &str) -> PathBuf {
    dir.join(format!("sample_{i}_{part}.csv"))
}

impl Dataset {
    pub fn train(&self) -> &[DiffusionSample] {
        &self.samples[..self.samples.len() - self.meta.test_samples.min(self.samples.len())]
    }

    pub fn test(&self) -> &[DiffusionSample] {
        &self.samples[self.samples.len() - self.meta.test_samples.min(self.samples.len())..]
    }

    pub fn train_seeds(&self) -> Vec<SeedVector> {
        self.train().iter().map(|s| s.x_s.clone()).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.cross.save_dir(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let p = dir.join(META_FILE);
        std::fs::write(&p, meta + "\n").map_err(|e| Error::io(&p, e))?;
        for (i, s) in self.samples.iter().enumerate() {
            write_vector_csv(&sample_path(dir, i, "x_s"), &s.x_s.to_f64())?;
            write_vector_csv(&sample_path(dir, i, "y_s"), &s.y_s.0)?;
            write_vector_csv(&sample_path(dir, i, "x_t"), &s.x_t.0)?;
            write_vector_csv(&sample_path(dir, i, "y_t"), &s.y_t.0)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(META_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let cross = CrossNetwork::load_dir(dir)?;
        let violations = cross.validate();
        if let Some(v) = violations.first() {
            return Err(Error::Invalid(format!("{}: {v}", dir.display())));
        }
        if (cross.n_source(), cross.n_target()) != (meta.n_source, meta.n_target) {
            return Err(Error::Invalid(format!(
                "{}: meta.json describes {}/{} nodes but the edge files have {}/{}",
                dir.display(),
                meta.n_source,
                meta.n_target,
                cross.n_source(),
                cross.n_target()
            )));
        }
        let samples = (0..meta.n_samples).map(|i| load_sample(dir, i, &cross)).collect::<Result<Vec<_>>>()?;
        Ok(Self { meta, cross, samples })
    }
}

fn load_sample(dir: &Path, i: usize, cross: &CrossNetwork) -> Result<DiffusionSample> {
    let read = |part: &str, n: usize| -> Result<Vec<f64>> {
        let p = sample_path(dir, i, part);
        let v = read_vector_csv(&p)?;
        if v.len() != n {
            return Err(Error::Invalid(format!("{}: {} entries, expected {n}", p.display(), v.len())));
        }
        Ok(v)
    };
    let (ns, nt) = (cross.n_source(), cross.n_target());
    Ok(DiffusionSample {
        x_s: SeedVector::from_values(&read("x_s", ns)?)?,
        y_s: InfectionVector::new(read("y_s", ns)?)?,
        x_t: InfectionVector::new(read("x_t", nt)?)?,
        y_t: InfectionVector::new(read("y_t", nt)?)?,
    })
}
