use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topk_core::costsens::{CostSpec, Penalty};
use topk_core::rng::SeedSplitter;
use topk_core::train::TrainConfig;
use topk_core::types::CardinalitySet;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// One experiment: data, both training stages, costs and the K-set schedule.
///
/// The `seed` fields inside `base` and `selector` are overwritten by streams
/// derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    /// Held-out fraction used by `curve`; 0 evaluates on the training data.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub base: TrainConfig,
    #[serde(default)]
    pub selector: TrainConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub k_schedule: KSchedule,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Header `f0,..,f{d-1},label`; labels are 0-based integers.
    Csv {
        path: PathBuf,
        #[serde(default)]
        n_classes: Option<usize>,
    },
    /// Row-major little-endian f32 matrix plus a JSON sidecar (default
    /// `<path>.json`) holding `rows`, `dim`, `n_classes` and `labels`.
    F32 {
        path: PathBuf,
        #[serde(default)]
        sidecar: Option<PathBuf>,
    },
    Synthetic {
        recipe: SyntheticRecipe,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianClusters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRecipe {
    pub kind: SyntheticKind,
    pub n_classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub cluster_spread: f64,
    /// 0 gives truncated, linearly separable clusters. Larger values widen
    /// clusters unevenly across classes.
    pub overlap_factor: f64,
    /// Defaults to a stream of the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SyntheticRecipe {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_classes < 2 || self.dim == 0 {
            return Err(CliError::Usage("synthetic recipe needs n_classes >= 2 and dim >= 1".into()));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite())
            || !(self.overlap_factor >= 0.0 && self.overlap_factor.is_finite())
        {
            return Err(CliError::Usage("cluster_spread and overlap_factor must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub lambda: f64,
    pub penalty: Penalty,
    pub normalize: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { lambda: 0.05, penalty: Penalty::LogK, normalize: true }
    }
}

impl CostConfig {
    pub fn spec(&self, kset: CardinalitySet) -> Result<CostSpec, CliError> {
        Ok(CostSpec::new(self.lambda, self.penalty.clone(), kset, self.normalize)?)
    }
}

/// Cardinality sets for successive selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KSchedule {
    /// `{1}, {1,2}, {1,2,4}, ...` up to `max`.
    Doubling {
        max: usize,
    },
    Custom {
        sets: Vec<Vec<usize>>,
    },
}

impl Default for KSchedule {
    fn default() -> Self {
        KSchedule::Doubling { max: 8 }
    }
}

impl KSchedule {
    pub fn sets(&self, n_classes: usize) -> Result<Vec<CardinalitySet>, CliError> {
        let sets = match self {
            KSchedule::Doubling { max } => CardinalitySet::doubling_schedule(*max)?,
            KSchedule::Custom { sets } => {
                sets.iter().map(|s| CardinalitySet::new(s.clone())).collect::<Result<Vec<_>, _>>()?
            }
        };
        if sets.is_empty() {
            return Err(CliError::Usage("empty K-set schedule".into()));
        }
        for s in &sets {
            s.check_within(n_classes)?;
        }
        Ok(sets)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(CliError::Usage(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if let DataSource::Synthetic { recipe } = &self.data {
            recipe.validate()?;
        }
        self.base.validate()?;
        self.selector.validate()?;
        Ok(())
    }

    pub fn splitter(&self) -> SeedSplitter {
        SeedSplitter::new(self.seed)
    }

    pub fn base_train(&self) -> TrainConfig {
        TrainConfig { seed: self.splitter().derive("base"), ..self.base.clone() }
    }

    pub fn selector_train(&self, kset: &CardinalitySet) -> TrainConfig {
        TrainConfig { seed: self.splitter().derive(&format!("selector/{}", kset_tag(kset))), ..self.selector.clone() }
    }
}

/// `1-2-4` for `{1, 2, 4}`; used in file names and CSV rows.
pub fn kset_tag(kset: &CardinalitySet) -> String {
    kset.ks().iter().map(|k| k.to_string()).collect::<Vec<_>>().join("-")
}
