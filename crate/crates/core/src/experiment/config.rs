use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{DiscriminatorSpec, GeneratorSpec};
use crate::objectives::{CycleMode, LossConfig};
use crate::phantom::CohortConfig;
use crate::seed::{derive_seed, sha256_hex};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?} (desk|paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: CycleMode,
    pub w_c: f64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{}_wc{}", self.mode.tag(), self.w_c)
    }
}

/// Training settings shared by every run of the grid; the cycle cell and
/// seed are filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub buffer_capacity: usize,
    pub gan_weight: f64,
    pub augmentation: bool,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

/// Everything needed to reproduce a grid of runs.
///
/// Seeds form a hash chain from `master_seed` (see [`derive_seed`]):
/// cohort `derive_seed(master, "cohort")`, fold plan
/// `derive_seed(master, "folds")`, and the training seed of fold `f`,
/// repeat `r` is `derive_seed(derive_seed(master, "train"), "fold{f}/repeat{r}")`.
/// The training seed is shared by all cells of the grid, so symmetric and
/// asymmetric runs of one fold/repeat start from identical networks and see
/// identical sample orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub master_seed: u64,
    /// `cohort.seed` is overwritten from the master seed.
    pub cohort: CohortConfig,
    pub folds: usize,
    pub repeats: usize,
    pub cells: Vec<Cell>,
    pub train: TrainTemplate,
    /// Quantization levels of the threshold search.
    pub levels: usize,
    /// Severe exemplar slices shown in the sample grids.
    pub exemplars: usize,
}

pub const DEFAULT_WEIGHTS: [f64; 3] = [0.25, 0.5, 1.0];

fn default_cells() -> Vec<Cell> {
    let mut v = Vec::new();
    for mode in [CycleMode::Symmetric, CycleMode::Asymmetric] {
        for w_c in DEFAULT_WEIGHTS {
            v.push(Cell { mode, w_c });
        }
    }
    v
}

impl ExperimentConfig {
    pub fn profile(profile: Profile, master_seed: u64) -> Self {
        let mut c = match profile {
            Profile::Desk => Self {
                profile,
                master_seed,
                cohort: CohortConfig::default(),
                folds: 5,
                repeats: 3,
                cells: default_cells(),
                train: TrainTemplate {
                    epochs: 4,
                    batch_size: 1,
                    learning_rate: 5e-4,
                    adam_beta1: 0.5,
                    adam_beta2: 0.999,
                    adam_eps: 1e-8,
                    buffer_capacity: 50,
                    gan_weight: 1.0,
                    augmentation: true,
                    generator: GeneratorSpec::new(64, 3, 8),
                    discriminator: DiscriminatorSpec::new(64, 3, 8),
                },
                levels: 256,
                exemplars: 4,
            },
            Profile::Paper => Self {
                profile,
                master_seed,
                cohort: CohortConfig {
                    image_size: 256,
                    slices_per_patient: 52,
                    ..CohortConfig::default()
                },
                folds: 5,
                repeats: 8,
                cells: default_cells(),
                train: TrainTemplate {
                    epochs: 16,
                    batch_size: 1,
                    learning_rate: 1e-4,
                    adam_beta1: 0.5,
                    adam_beta2: 0.999,
                    adam_eps: 1e-8,
                    buffer_capacity: 50,
                    gan_weight: 1.0,
                    augmentation: true,
                    generator: GeneratorSpec::new(256, 6, 32),
                    discriminator: DiscriminatorSpec::new(256, 3, 64),
                },
                levels: 256,
                exemplars: 4,
            },
        };
        c.resolve();
        c
    }

    /// Re-derives the cohort seed from the master seed.
    pub fn resolve(&mut self) {
        self.cohort.seed = derive_seed(self.master_seed, "cohort");
    }

    pub fn fold_seed(&self) -> u64 {
        derive_seed(self.master_seed, "folds")
    }

    pub fn train_seed(&self, fold: usize, repeat: usize) -> u64 {
        derive_seed(
            derive_seed(self.master_seed, "train"),
            &format!("fold{fold}/repeat{repeat}"),
        )
    }

    pub fn train_config(&self, cell: Cell, fold: usize, repeat: usize) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            buffer_capacity: t.buffer_capacity,
            loss: LossConfig::with_gan_weight(cell.mode, cell.w_c, t.gan_weight),
            seed: self.train_seed(fold, repeat),
            augmentation: t.augmentation,
            generator: t.generator.clone(),
            discriminator: t.discriminator.clone(),
        }
    }

    /// Weights that appear with both cycle modes, ascending.
    pub fn weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.mode == CycleMode::Symmetric)
            .map(|c| c.w_c)
            .filter(|w| {
                self.cells
                    .iter()
                    .any(|c| c.mode == CycleMode::Asymmetric && c.w_c == *w)
            })
            .collect();
        w.sort_by(f64::total_cmp);
        w.dedup();
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.folds < 2 {
            return Err(Error::Config("at least two folds are needed".into()));
        }
        if self.repeats == 0 || self.cells.is_empty() {
            return Err(Error::Config("the grid needs at least one repeat and one cell".into()));
        }
        if self.levels < 2 {
            return Err(Error::Config("levels must be >= 2".into()));
        }
        if self.train.generator.image_size != self.cohort.image_size {
            return Err(Error::Config(format!(
                "network image size {} differs from cohort image size {}",
                self.train.generator.image_size, self.cohort.image_size
            )));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if self.cells[..i].iter().any(|d| d.mode == c.mode && d.w_c == c.w_c) {
                return Err(Error::Config(format!("duplicate cell {}", c.dir_name())));
            }
        }
        self.train_config(self.cells[0], 0, 0).validate()
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: Self = serde_json::from_str(&text)?;
        c.resolve();
        Ok(c)
    }
}
