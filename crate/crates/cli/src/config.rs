//! Run configuration, loaded from TOML and overridden by command-line flags.
//!
//! ```toml
//! energy = 1.8
//! workers = 1
//!
//! [model]
//! m = 1
//! n = 1
//! p = 1
//!
//! [perturbation]
//! name = "V_TR"      # catalogue name, "zero", or "random" (uses seed)
//! length = 1.0
//! seed = 0
//!
//! [discretization]
//! n_x = 6
//! n_y = 40
//! leaf_max_length = 0.0625
//!
//! [sweep]
//! lengths = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ftr_scatter::model::support_grid;
use ftr_scatter::{build_model, ftr_residual, perturbation_library, random_ftr, BlockModel, PerturbationSpec};
use serde::{Deserialize, Serialize};

/// Only environment variable read: overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "FTR_SCATTER_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub energy: f64,
    /// Worker threads for leaf solves.
    pub workers: usize,
    pub model: ModelConfig,
    pub perturbation: PerturbationConfig,
    pub discretization: DiscretizationConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub name: String,
    pub length: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub n_x: usize,
    pub n_y: usize,
    /// Green's kernel channels; defaults to n_y + p.
    pub n_chan: Option<usize>,
    /// Gauss–Hermite nodes in y; defaults to n_y + 24.
    pub n_quad_y: Option<usize>,
    pub leaf_max_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lengths: Vec<f64>,
    /// Ladder values for `converge`.
    pub ladder: Vec<usize>,
    pub reference_n_x: usize,
    pub reference_n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub unitarity: f64,
    pub skew: f64,
    pub trace: f64,
    pub merge: f64,
    /// Sweep rows above this unitarity residual are flagged.
    pub flag_unitarity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            energy: 1.8,
            workers: 1,
            model: ModelConfig { m: 1, n: 1, p: 1 },
            perturbation: PerturbationConfig::default(),
            discretization: DiscretizationConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { m: 1, n: 1, p: 1 }
    }
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { name: "V_TR".into(), length: 1.0, seed: 0 }
    }
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self { n_x: 6, n_y: 40, n_chan: None, n_quad_y: None, leaf_max_length: 1.0 / 16.0 }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lengths: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            ladder: (2..=12).collect(),
            reference_n_x: 20,
            reference_n_y: 60,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { unitarity: 1e-6, skew: 1e-6, trace: 1e-6, merge: 1e-8, flag_unitarity: 1e-6 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.discretization;
        if d.n_x == 0 || d.n_y == 0 {
            bail!("n_x and n_y must be positive");
        }
        if !(d.leaf_max_length > 0.0) {
            bail!("leaf_max_length must be positive");
        }
        if !(self.perturbation.length > 0.0) {
            bail!("perturbation length must be positive");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.sweep.lengths.windows(2).any(|w| w[1] <= w[0]) {
            bail!("sweep lengths must be strictly increasing");
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.dir.clone())
    }

    pub fn block_model(&self) -> Result<BlockModel> {
        let m = self.model;
        Ok(build_model(m.m, m.n, m.p)?)
    }

    /// Perturbation with support [0, l].
    pub fn perturbation_for(&self, model: &BlockModel, l: f64) -> Result<PerturbationSpec> {
        let name = self.perturbation.name.as_str();
        let v = match name {
            "zero" => PerturbationSpec::zero(model.spinor_dim(), l),
            "random" => {
                let envelope = perturbation_library("v1_scalar", self.energy, l)?;
                random_ftr(self.perturbation.seed, model, &envelope)?
            }
            _ => perturbation_library(name, self.energy, l)?,
        };
        if v.dim != model.spinor_dim() {
            bail!("perturbation '{name}' has {} components, model has {}", v.dim, model.spinor_dim());
        }
        Ok(v)
    }

    pub fn perturbation(&self, model: &BlockModel) -> Result<PerturbationSpec> {
        self.perturbation_for(model, self.perturbation.length)
    }

    /// Whether V is FTR-symmetric on a sample grid (and the model admits θ).
    pub fn perturbation_is_ftr(&self, model: &BlockModel, v: &PerturbationSpec) -> bool {
        let grid = support_grid(v.support_length, 3.0, 12);
        model.ftr_symmetric() && ftr_residual(v, model, &grid).is_ok_and(|r| r < 1e-12)
    }
}
