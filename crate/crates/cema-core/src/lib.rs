//! CEMA: a query-efficient black-box multi-task text adversarial attack.
//!
//! The pipeline queries a victim once per auxiliary text (one query returns
//! every task's output), clusters joint input/output representations into
//! deep-level pseudo-labels, trains substitute classifiers on those labels,
//! generates adversarial candidates white-box against the substitutes, and
//! picks the final example by transferability across a bootstrap ensemble.

pub mod analysis;
pub mod attacks;
pub mod cluster;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ensemble;
pub mod metrics;
pub mod pipeline;
pub mod represent;
pub mod substitute;
pub mod text;
pub mod toy;
pub mod victim;

pub use attacks::{AdversarialCandidate, AttackConstraints, AttackMethod};
pub use cluster::{ClusterAssignment, ClusterMethod};
pub use config::{ClusteringSpec, EmbedderSpec, RunConfig, VictimSpec};
pub use error::{CemaError, Result};
pub use metrics::AttackReport;
pub use pipeline::{run_ablate, run_attack, run_evaluate, run_verify, AblationAxis};
pub use substitute::{SubstituteModel, TrainingConfig};
pub use text::{EmbeddingVector, Perturbation, PerturbationKind, Text, Token};
pub use victim::{QueryLedger, TaskKind, TaskSpec, Victim, VictimResponse};
