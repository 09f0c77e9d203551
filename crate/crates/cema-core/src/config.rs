//! Run configuration shared by the library pipeline and the CLI.

use crate::attacks::{AttackConstraints, AttackMethod};
use crate::cluster::ClusterMethod;
use crate::ensemble::EnsembleConfig;
use crate::error::{CemaError, Result};
use crate::substitute::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum VictimSpec {
    /// Built-in toy victims: "two-task" or "six-task".
    Builtin { name: String },
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    /// Hashed char-3-gram TF embedder (default backend).
    HashedNgram { dim: usize },
    /// One-hot bag of words with vocabulary built from the auxiliary texts
    /// and their victim outputs.
    OneHot,
    Remote { url: String },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::HashedNgram { dim: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSpec {
    pub method: ClusterMethod,
    #[serde(default = "default_n_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_n_neighbors")]
    pub n_neighbors: usize,
}

fn default_n_clusters() -> usize {
    2
}

fn default_n_neighbors() -> usize {
    10
}

impl Default for ClusteringSpec {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Spectral,
            n_clusters: 2,
            n_neighbors: 10,
        }
    }
}

fn default_auxiliary_size() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub victim: VictimSpec,
    /// When absent, the first `auxiliary_size` victim texts serve as
    /// auxiliary data.
    #[serde(default)]
    pub auxiliary_path: Option<PathBuf>,
    pub victim_texts_path: PathBuf,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub clustering: ClusteringSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    pub attack_methods: Vec<AttackMethod>,
    #[serde(default)]
    pub constraints: AttackConstraints,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub confusables_path: Option<PathBuf>,
    #[serde(default = "default_auxiliary_size")]
    pub auxiliary_size: usize,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attack_methods.is_empty() {
            return Err(CemaError::Config("no attack methods configured".into()));
        }
        if self.auxiliary_size == 0 {
            return Err(CemaError::Config("auxiliary_size must be positive".into()));
        }
        self.constraints.validate()?;
        self.ensemble.validate()?;
        self.training.validate()?;
        if !self.victim_texts_path.exists() {
            return Err(CemaError::Config(format!(
                "victim texts file {:?} does not exist",
                self.victim_texts_path
            )));
        }
        if let Some(p) = &self.auxiliary_path {
            if !p.exists() {
                return Err(CemaError::Config(format!(
                    "auxiliary file {p:?} does not exist"
                )));
            }
        }
        Ok(())
    }

    /// Digest of everything that affects the run's results. The output
    /// directory is excluded so moving artifacts does not change identity.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Seeds for the pipeline stages, all derived from the master seed so a
    /// run is reproducible from one number.
    pub fn derived_seeds(&self) -> DerivedSeeds {
        DerivedSeeds {
            clustering: self.master_seed,
            training: self.master_seed.wrapping_add(1),
            ensemble_base: self.master_seed.wrapping_add(1000),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DerivedSeeds {
    pub clustering: u64,
    pub training: u64,
    pub ensemble_base: u64,
}
