//! Experiment configuration: one JSON file drives data generation,
//! attack training, detection and the benchmark matrix. Identical
//! configs reproduce identical artifacts byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use triggerforge::attack::AttackSpec;
use triggerforge::net::TrainConfig;
use triggerforge::perturb::{PerturbConfig, PerturbOptimizer};
use triggerforge::synth::{ColorLabel, ObjectClass, RepoSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub repository: RepositoryConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub perturb: PerturbSection,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        // 150 per class keeps >= 100 held-out non-target images
        DatasetConfig { n_classes: 8, per_class: 150, image_size: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositoryConfig {
    /// Colors in the accessory grid (all ten when omitted).
    #[serde(default)]
    pub colors: Option<Vec<ColorLabel>>,
    /// Extra procedural objects appended to the defender repository.
    pub distractors: usize,
}

impl Default for RepositoryConfig {
    fn default() -> Self {
        RepositoryConfig { colors: None, distractors: 101 }
    }
}

impl RepositoryConfig {
    pub fn base_spec(&self) -> RepoSpec {
        match &self.colors {
            None => RepoSpec::standard(),
            Some(colors) => RepoSpec {
                pairs: ObjectClass::REAL
                    .iter()
                    .flat_map(|&oc| colors.iter().map(move |&c| (oc, c)))
                    .collect(),
                distractors: 0,
            },
        }
    }

    pub fn extended_spec(&self) -> RepoSpec {
        let mut spec = self.base_spec();
        spec.distractors = self.distractors;
        spec
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise: f64,
    /// Fraction of training images carrying a random keep-label paste.
    pub paste_fraction: f64,
    /// Held-out poisoned images per attack evaluation.
    pub eval_images: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            noise: 0.1,
            paste_fraction: triggerforge::attack::DEFAULT_PASTE_FRACTION,
            eval_images: 100,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            noise: self.noise,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub lambda1: f64,
    pub lambda2_init: f64,
    pub epochs: usize,
    pub step: f64,
    /// Plain gradient steps by default; adaptive-moment as an option.
    pub adaptive: bool,
    /// Clean images used for the reconstruction.
    pub images: usize,
    pub strict_schedule: bool,
}

impl Default for PerturbSection {
    fn default() -> Self {
        PerturbSection {
            lambda1: 1e-4,
            lambda2_init: 0.05,
            epochs: 200,
            step: 0.05,
            adaptive: false,
            images: 200,
            strict_schedule: false,
        }
    }
}

impl PerturbSection {
    pub fn to_perturb_config(&self) -> PerturbConfig {
        PerturbConfig {
            lambda1: self.lambda1,
            lambda2_init: self.lambda2_init,
            n_epochs: self.epochs,
            optimizer: if self.adaptive {
                PerturbOptimizer::Adam { step: self.step }
            } else {
                PerturbOptimizer::Sgd { step: self.step }
            },
            strict_schedule: self.strict_schedule,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub scales: Vec<f32>,
    /// Held-out images used for fooling evaluation during retrieval.
    pub eval_images: usize,
    /// Regions for multi-trigger retrieval.
    pub k: usize,
    /// Brute-force grid stride in pixels.
    pub stride: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            scales: triggerforge::retrieval::DEFAULT_SCALES.to_vec(),
            eval_images: 40,
            k: 2,
            stride: triggerforge::retrieval::DEFAULT_BF_STRIDE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub delta: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig { delta: triggerforge::detect::DEFAULT_DELTA }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("invalid config {}: {e}", path.display()))
}
