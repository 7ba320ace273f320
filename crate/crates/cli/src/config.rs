//! Config file loading and flag merging. Precedence: flags, then file, then defaults.
//!
//! The file is TOML; every table and key is optional:
//!
//! ```toml
//! seed = 3
//!
//! [curate]            # pipeline settings, also used by cluster and train-vdnet
//! alpha = 0.5
//! n_objects = 1600
//! n_predicates = 500
//! linkage = "average"
//! cluster_threshold = 0.35
//! train_fraction = 0.7
//! min_support = 20
//!
//! [curate.vdnet]      # discriminator training
//! epochs = 20
//! learning_rate = 1e-3
//! batch_size = 256
//!
//! [eval]              # eval, eval-vdnet and baseline
//! mode = "preddet"
//! k = [50, 100]
//! aggregation = "per_image"
//! smoothing = 0.0
//!
//! [synth]
//! n_images = 3000
//! instances_per_image = 4
//! n_classes = 3
//! embed_dim = 50
//! ```

use std::path::Path;

use relcull::analysis::{Aggregation, EvalMode, SynthSpec};
use relcull::curate::CurateConfig;
use serde::{Deserialize, Serialize};

use crate::args::{ClusterFlags, RecallFlags, VdnetFlags};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub curate: CurateConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub k: Vec<usize>,
    pub aggregation: Aggregation,
    pub smoothing: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: EvalMode::PredDet,
            k: vec![50, 100],
            aggregation: Aggregation::PerImage,
            smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    #[serde(flatten)]
    pub spec: SynthSpec,
    pub embed_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            spec: SynthSpec::default(),
            embed_dim: 50,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    /// Applies a seed to every randomized stage.
    pub fn apply_seed(&mut self, flag: Option<u64>) {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.curate.split_seed = seed;
            self.curate.vdnet.seed = seed;
            self.synth.spec.seed = seed;
        }
    }
}

pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

pub fn apply_cluster(cfg: &mut CurateConfig, flags: &ClusterFlags) {
    set(&mut cfg.cluster_threshold, flags.cluster_threshold);
    set(&mut cfg.linkage, flags.linkage);
}

pub fn apply_vdnet(cfg: &mut CurateConfig, flags: &VdnetFlags) {
    set(&mut cfg.vdnet.epochs, flags.epochs);
    set(&mut cfg.vdnet.learning_rate, flags.lr);
    set(&mut cfg.vdnet.batch_size, flags.batch_size);
}

pub fn apply_recall(cfg: &mut EvalConfig, flags: &RecallFlags) {
    set(&mut cfg.mode, flags.mode.map(Into::into));
    set(&mut cfg.k, flags.k.clone());
    set(&mut cfg.aggregation, flags.aggregation.map(Into::into));
}
