//! Deterministic derivations shared by all subcommands: datasets,
//! repositories, clean-image pools and per-model seeds all derive from
//! the single config seed.

use triggerforge::synth::{gen_faces, gen_trigger_repo, FaceDataset, Repository};
use triggerforge::{Image, Result};

use crate::config::ExperimentConfig;

const ATTACK_REPO_SALT: u64 = 0x5245504f5f52; // attacker objects
const DEFENSE_REPO_SALT: u64 = 0x5245504f5f53; // defender objects
const CLEAN_NET_SALT: u64 = 0xc1ea4;
const ATTACK_NET_SALT: u64 = 0xa77ac4;

pub struct Workbench {
    pub dataset: FaceDataset,
    pub attack_repo: Repository,
    pub defense_repo: Repository,
    pub defense_repo_plus: Repository,
}

impl Workbench {
    pub fn build(cfg: &ExperimentConfig) -> Result<Workbench> {
        let dataset = gen_faces(
            cfg.seed,
            cfg.dataset.n_classes,
            cfg.dataset.per_class,
            cfg.dataset.image_size,
        )?;
        let attack_repo =
            gen_trigger_repo(cfg.seed ^ ATTACK_REPO_SALT, "r", &cfg.repository.base_spec());
        let defense_repo =
            gen_trigger_repo(cfg.seed ^ DEFENSE_REPO_SALT, "s", &cfg.repository.base_spec());
        let defense_repo_plus = gen_trigger_repo(
            cfg.seed ^ DEFENSE_REPO_SALT,
            "s_plus",
            &cfg.repository.extended_spec(),
        );
        Ok(Workbench { dataset, attack_repo, defense_repo, defense_repo_plus })
    }

    /// Clean training images (label != target) for perturbation
    /// reconstruction.
    pub fn pert_pool(&self, target: usize, n: usize) -> Vec<Image> {
        self.dataset
            .train
            .iter()
            .filter(|(_, l)| *l != target)
            .take(n)
            .map(|(img, _)| img.clone())
            .collect()
    }

    /// Held-out images (label != target) for fooling evaluation.
    pub fn eval_pool(&self, target: usize, n: usize) -> Vec<Image> {
        self.dataset
            .val_excluding(target)
            .into_iter()
            .take(n)
            .cloned()
            .collect()
    }
}

pub fn clean_net_seed(cfg_seed: u64) -> u64 {
    cfg_seed ^ CLEAN_NET_SALT
}

pub fn attack_net_seed(cfg_seed: u64, index: usize) -> u64 {
    cfg_seed ^ ATTACK_NET_SALT ^ ((index as u64) << 32)
}
