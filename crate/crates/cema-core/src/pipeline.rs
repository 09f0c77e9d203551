//! End-to-end orchestration: attack, evaluate, verify, and ablate runs, plus
//! the on-disk artifact formats the CLI exposes.

use crate::analysis::{
    independence_table, simulate_union_prob, transfer_rate_report, Dependence, EventSimConfig,
};
use crate::attacks::{
    generate_candidates, AdversarialCandidate, AttackMethod, ConfusableTable,
};
use crate::cluster::{assign_deep_labels, cluster_with_k};
use crate::config::{EmbedderSpec, RunConfig, VictimSpec};
use crate::dataset::{read_jsonl, DatasetEntry};
use crate::ensemble::{select_final, train_ensemble, SelectionResult};
use crate::error::{CemaError, Result};
use crate::metrics::{asr_from_labels, bleu_str, rouge_drop, AttackReport, TaskMetric};
use crate::represent::{
    build_joint, CachingEmbedder, Embedder, HashedNgramEmbedder, OneHotEmbedder, RemoteEmbedder,
};
use crate::substitute::{train, SubstituteModel, TrainingConfig};
use crate::text::{normalize_and_tokenize, Text};
use crate::toy::{toy_six_task_victim, toy_two_task_victim};
use crate::victim::{query, QueryLedger, RemoteVictim, RetryPolicy, TaskKind, TaskSpec, Victim};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub config_digest: String,
    pub master_seed: u64,
    pub auxiliary_count: usize,
    pub attack_queries: u64,
    pub methods: Vec<AttackMethod>,
    pub ensemble_size: usize,
    /// Substitute architecture note: the run report records that the
    /// substitute is a desk-scale embedding-bag MLP rather than a deep
    /// transformer.
    pub substitute_architecture: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub original: String,
    pub candidates: Vec<AdversarialCandidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: String,
    pub original: String,
    pub chosen: Option<AdversarialCandidate>,
    pub scores: Vec<u32>,
    pub tie_break: Vec<f64>,
    pub h: Option<usize>,
}

#[derive(Debug)]
pub struct TextOutcome {
    pub id: String,
    pub original: Text,
    pub candidates: Vec<AdversarialCandidate>,
    pub selection: SelectionResult,
}

#[derive(Debug)]
pub struct RunOutput {
    pub config_digest: String,
    pub auxiliary_count: usize,
    pub attack_queries: u64,
    pub tasks: Vec<TaskSpec>,
    pub outcomes: Vec<TextOutcome>,
    pub primary: SubstituteModel,
    pub ensemble: Vec<SubstituteModel>,
}

pub fn build_victim(spec: &VictimSpec) -> Result<Box<dyn Victim>> {
    match spec {
        VictimSpec::Builtin { name } => match name.as_str() {
            "two-task" => Ok(Box::new(toy_two_task_victim()?)),
            "six-task" => Ok(Box::new(toy_six_task_victim()?)),
            other => Err(CemaError::Config(format!(
                "unknown builtin victim {other:?} (expected two-task or six-task)"
            ))),
        },
        VictimSpec::Remote {
            url,
            timeout_ms,
            retries,
        } => Ok(Box::new(RemoteVictim::new(
            url.clone(),
            Duration::from_millis(*timeout_ms),
            RetryPolicy {
                max_retries: *retries,
                backoff_ms: 100,
            },
        ))),
    }
}

fn build_embedder(
    spec: &EmbedderSpec,
    aux_corpus: &[String],
) -> Result<Box<dyn Embedder>> {
    match spec {
        EmbedderSpec::HashedNgram { dim } => Ok(Box::new(CachingEmbedder::new(
            HashedNgramEmbedder::new(*dim)?,
        ))),
        EmbedderSpec::OneHot => {
            let texts: Vec<Text> = aux_corpus
                .iter()
                .map(|s| normalize_and_tokenize(s))
                .collect::<Result<_>>()?;
            Ok(Box::new(CachingEmbedder::new(OneHotEmbedder::from_corpus(
                texts.iter(),
            )?)))
        }
        EmbedderSpec::Remote { url } => Ok(Box::new(RemoteEmbedder::connect(url.clone())?)),
    }
}

fn load_confusables(cfg: &RunConfig) -> Result<ConfusableTable> {
    match &cfg.confusables_path {
        Some(p) => ConfusableTable::load(p),
        None => Ok(ConfusableTable::builtin()),
    }
}

/// Run the full attack pipeline: query the victim once per auxiliary text,
/// cluster joint representations into deep-level labels, train the primary
/// substitute and bootstrap ensemble, generate candidates per victim text,
/// and select finals by transferability. Victim queries equal the auxiliary
/// count exactly.
pub fn run_attack(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let seeds = cfg.derived_seeds();
    let victim = build_victim(&cfg.victim)?;
    let tasks = victim.declare_tasks()?;

    let victim_texts = read_jsonl(&cfg.victim_texts_path)?;
    let auxiliary: Vec<DatasetEntry> = match &cfg.auxiliary_path {
        Some(p) => read_jsonl(p)?,
        None => {
            if victim_texts.len() < cfg.auxiliary_size {
                eprintln!(
                    "warning: only {} victim texts available for {} auxiliary slots",
                    victim_texts.len(),
                    cfg.auxiliary_size
                );
            }
            victim_texts
                .iter()
                .take(cfg.auxiliary_size)
                .cloned()
                .collect()
        }
    };
    let auxiliary: Vec<DatasetEntry> = auxiliary.into_iter().take(cfg.auxiliary_size).collect();

    // attack-phase ledger: one query per auxiliary text, nothing else
    let attack_ledger = QueryLedger::with_budget(auxiliary.len() as u64);
    let responses: Vec<_> = auxiliary
        .iter()
        .map(|e| query(victim.as_ref(), &e.text, &attack_ledger))
        .collect::<Result<_>>()?;

    // embedder sees auxiliary inputs and outputs when it needs a vocabulary
    let mut corpus: Vec<String> = auxiliary.iter().map(|e| e.text.raw().to_string()).collect();
    for r in &responses {
        corpus.extend(r.outputs.iter().map(|(_, o)| o.clone()));
    }
    let embedder = build_embedder(&cfg.embedder, &corpus)?;

    let joints: Vec<Vec<f64>> = auxiliary
        .iter()
        .zip(&responses)
        .map(|(e, r)| Ok(build_joint(embedder.as_ref(), &e.text, r)?.vector))
        .collect::<Result<_>>()?;
    let assignment = cluster_with_k(
        &joints,
        cfg.clustering.n_clusters,
        cfg.clustering.method,
        seeds.clustering,
        cfg.clustering.n_neighbors.min(joints.len().saturating_sub(1)),
    )?;
    let aux_texts: Vec<Text> = auxiliary.iter().map(|e| e.text.clone()).collect();
    let dataset = assign_deep_labels(&assignment, &aux_texts)?;

    let training_cfg = TrainingConfig {
        seed: seeds.training,
        ..cfg.training.clone()
    };
    let primary = train(&dataset, &training_cfg)?;
    let ensemble_cfg = crate::ensemble::EnsembleConfig {
        base_seed: seeds.ensemble_base,
        ..cfg.ensemble.clone()
    };
    let ensemble = train_ensemble(&dataset, &ensemble_cfg, &training_cfg)?;

    let confusables = load_confusables(cfg)?;
    let outcomes: Vec<TextOutcome> = victim_texts
        .par_iter()
        .map(|entry| {
            let candidates = generate_candidates(
                &cfg.attack_methods,
                &primary,
                embedder.as_ref(),
                &entry.text,
                &cfg.constraints,
                &confusables,
            )?;
            let selection = select_final(&primary, &ensemble, &entry.text, &candidates)?;
            Ok(TextOutcome {
                id: entry.id.clone(),
                original: entry.text.clone(),
                candidates,
                selection,
            })
        })
        .collect::<Result<_>>()?;

    Ok(RunOutput {
        config_digest: cfg.digest(),
        auxiliary_count: auxiliary.len(),
        attack_queries: attack_ledger.total_queries(),
        tasks,
        outcomes,
        primary,
        ensemble,
    })
}

/// Persist attack artifacts under the config's output directory.
pub fn write_artifacts(cfg: &RunConfig, output: &RunOutput) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir.join("substitutes"))?;
    let meta = RunMeta {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        config_digest: output.config_digest.clone(),
        master_seed: cfg.master_seed,
        auxiliary_count: output.auxiliary_count,
        attack_queries: output.attack_queries,
        methods: cfg.attack_methods.clone(),
        ensemble_size: output.ensemble.len(),
        substitute_architecture: format!(
            "embedding-bag(e={}) -> dense(h={}, tanh) -> dense(1, sigmoid)",
            cfg.training.embed_dim, cfg.training.hidden_dim
        ),
    };
    std::fs::write(
        dir.join("run_meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    std::fs::write(
        dir.join("substitutes").join("primary.json"),
        output.primary.to_json()?,
    )?;
    for (k, model) in output.ensemble.iter().enumerate() {
        std::fs::write(
            dir.join("substitutes").join(format!("member_{k}.json")),
            model.to_json()?,
        )?;
    }
    let mut cand_file = std::fs::File::create(dir.join("candidates.jsonl"))?;
    let mut sel_file = std::fs::File::create(dir.join("selections.jsonl"))?;
    for o in &output.outcomes {
        let cand = CandidateRecord {
            id: o.id.clone(),
            original: o.original.raw().to_string(),
            candidates: o.candidates.clone(),
        };
        writeln!(cand_file, "{}", serde_json::to_string(&cand)?)?;
        let sel = SelectionRecord {
            id: o.id.clone(),
            original: o.original.raw().to_string(),
            chosen: o.selection.chosen.clone(),
            scores: o.selection.scores.clone(),
            tie_break: o.selection.tie_break.clone(),
            h: o.selection.h,
        };
        writeln!(sel_file, "{}", serde_json::to_string(&sel)?)?;
    }
    // attack-phase report: metrics arrive with evaluate
    let report = AttackReport::new(
        vec![],
        mean_similarity(&output.outcomes),
        output.attack_queries,
        0,
        output.config_digest.clone(),
        cfg.master_seed,
    );
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(())
}

fn mean_similarity(outcomes: &[TextOutcome]) -> Option<f64> {
    let sims: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.selection.chosen.as_ref().map(|c| c.similarity))
        .collect();
    if sims.is_empty() {
        None
    } else {
        Some(sims.iter().sum::<f64>() / sims.len() as f64)
    }
}

pub fn read_selections(dir: &Path) -> Result<Vec<SelectionRecord>> {
    let file = std::fs::File::open(dir.join("selections.jsonl"))?;
    BufReader::new(file)
        .lines()
        .map(|line| Ok(serde_json::from_str(&line?)?))
        .collect()
}

pub fn read_candidate_records(dir: &Path) -> Result<Vec<CandidateRecord>> {
    let file = std::fs::File::open(dir.join("candidates.jsonl"))?;
    BufReader::new(file)
        .lines()
        .map(|line| Ok(serde_json::from_str(&line?)?))
        .collect()
}

pub fn read_run_meta(dir: &Path) -> Result<RunMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        dir.join("run_meta.json"),
    )?)?)
}

/// Evaluate stored selections against the victim: ASR for classification
/// tasks, mean sentence BLEU (translation of the adversarial scored against
/// the translation of the original) for translation tasks, and mean ROUGE-L
/// drop for summarization tasks. Failed attacks count as unchanged.
pub fn run_evaluate(cfg: &RunConfig, artifact_dir: &Path) -> Result<AttackReport> {
    let meta = read_run_meta(artifact_dir)?;
    if meta.config_digest != cfg.digest() {
        return Err(CemaError::Config(format!(
            "config digest mismatch: artifacts carry {}, config is {}",
            meta.config_digest,
            cfg.digest()
        )));
    }
    let selections = read_selections(artifact_dir)?;
    let victim = build_victim(&cfg.victim)?;
    let tasks = victim.declare_tasks()?;
    let eval_ledger = QueryLedger::unbounded();

    // one victim query per original and per chosen adversarial
    let mut responses = Vec::with_capacity(selections.len());
    for s in &selections {
        let original = normalize_and_tokenize(&s.original)?;
        let orig_resp = query(victim.as_ref(), &original, &eval_ledger)?;
        let adv_resp = match &s.chosen {
            Some(c) => Some(query(victim.as_ref(), &c.text, &eval_ledger)?),
            None => None,
        };
        responses.push((orig_resp, adv_resp));
    }

    let mut task_metrics = Vec::new();
    for spec in &tasks {
        let metric = match spec.kind {
            TaskKind::Classification => {
                let pairs: Vec<(String, Option<String>)> = responses
                    .iter()
                    .map(|(o, a)| {
                        (
                            o.output_for(&spec.task_id).unwrap_or_default().to_string(),
                            a.as_ref()
                                .and_then(|r| r.output_for(&spec.task_id))
                                .map(str::to_string),
                        )
                    })
                    .collect();
                TaskMetric {
                    task_id: spec.task_id.clone(),
                    kind: spec.kind,
                    metric: "asr".into(),
                    value: Some(asr_from_labels(&pairs)),
                }
            }
            TaskKind::Translation => {
                let scores: Vec<f64> = responses
                    .iter()
                    .map(|(o, a)| {
                        let reference = o.output_for(&spec.task_id).unwrap_or_default();
                        match a.as_ref().and_then(|r| r.output_for(&spec.task_id)) {
                            // failed attack leaves the translation untouched
                            None => Ok(1.0),
                            Some(hyp) => bleu_str(reference, hyp),
                        }
                    })
                    .collect::<Result<_>>()?;
                TaskMetric {
                    task_id: spec.task_id.clone(),
                    kind: spec.kind,
                    metric: "bleu".into(),
                    value: Some(scores.iter().sum::<f64>() / scores.len().max(1) as f64),
                }
            }
            TaskKind::Summarization => {
                // no gold summaries at evaluation time: the original output
                // is the reference, so RDP measures degradation against it
                let drops: Vec<f64> = responses
                    .iter()
                    .filter_map(|(o, a)| {
                        let orig = o.output_for(&spec.task_id)?;
                        match a.as_ref().and_then(|r| r.output_for(&spec.task_id)) {
                            None => Some(0.0),
                            Some(adv) => rouge_drop(orig, orig, adv),
                        }
                    })
                    .collect();
                TaskMetric {
                    task_id: spec.task_id.clone(),
                    kind: spec.kind,
                    metric: "rdp".into(),
                    value: if drops.is_empty() {
                        None
                    } else {
                        Some(drops.iter().sum::<f64>() / drops.len() as f64)
                    },
                }
            }
        };
        task_metrics.push(metric);
    }

    let sims: Vec<f64> = selections
        .iter()
        .filter_map(|s| s.chosen.as_ref().map(|c| c.similarity))
        .collect();
    let mean_sim = if sims.is_empty() {
        None
    } else {
        Some(sims.iter().sum::<f64>() / sims.len() as f64)
    };
    let report = AttackReport::new(
        task_metrics,
        mean_sim,
        meta.attack_queries,
        eval_ledger.total_queries(),
        meta.config_digest.clone(),
        meta.master_seed,
    );
    std::fs::write(artifact_dir.join("report.json"), report.to_json()?)?;
    std::fs::write(artifact_dir.join("report.csv"), report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub union_sweeps: serde_json::Value,
    pub independence: Option<serde_json::Value>,
    pub transfer_rates: Option<serde_json::Value>,
}

/// Verification pass: union-probability sweeps in both dependence modes,
/// plus, when stored artifacts exist, the pairwise independence table of
/// per-method successes and the transfer-rate table against the victim.
pub fn run_verify(cfg: &RunConfig, artifact_dir: Option<&Path>, trials: u64) -> Result<VerifyOutput> {
    let sweep_probs = [0.2, 0.25, 0.3, 0.35, 0.4];
    let mut sweeps = serde_json::Map::new();
    for (name, dep) in [
        ("independent", Dependence::Independent),
        ("shared-latent-0.9", Dependence::SharedLatent { rho: 0.9 }),
    ] {
        let est = simulate_union_prob(&EventSimConfig {
            success_probs: sweep_probs.to_vec(),
            trials,
            dependence: dep,
            seed: cfg.master_seed,
        })?;
        sweeps.insert(name.to_string(), serde_json::to_value(est)?);
    }

    let mut independence = None;
    let mut transfer = None;
    if let Some(dir) = artifact_dir {
        let records = read_candidate_records(dir)?;
        let methods = &cfg.attack_methods;
        if methods.len() >= 2 && !records.is_empty() {
            let sets: Vec<HashSet<usize>> = methods
                .iter()
                .map(|m| {
                    records
                        .iter()
                        .enumerate()
                        .filter(|(_, r)| r.candidates.iter().any(|c| c.method_id == *m))
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            independence = Some(serde_json::to_value(independence_table(
                &sets,
                records.len(),
            )?)?);
        }

        // transfer rates need victim flips: evaluation-phase queries only
        let selections = read_selections(dir)?;
        let victim = build_victim(&cfg.victim)?;
        let tasks = victim.declare_tasks()?;
        if let Some(cls) = tasks.iter().find(|t| t.kind == TaskKind::Classification) {
            let eval_ledger = QueryLedger::unbounded();
            let mut observations = Vec::new();
            for s in &selections {
                let Some(chosen) = &s.chosen else { continue };
                let flips = s.h.map(|h| s.scores[h]).unwrap_or(0);
                let original = normalize_and_tokenize(&s.original)?;
                let orig_label = query(victim.as_ref(), &original, &eval_ledger)?
                    .output_for(&cls.task_id)
                    .map(str::to_string);
                let adv_label = query(victim.as_ref(), &chosen.text, &eval_ledger)?
                    .output_for(&cls.task_id)
                    .map(str::to_string);
                observations.push((flips, orig_label != adv_label));
            }
            let meta = read_run_meta(dir)?;
            transfer = Some(serde_json::to_value(transfer_rate_report(
                &observations,
                meta.ensemble_size as u32,
            ))?);
        }
    }

    let output = VerifyOutput {
        union_sweeps: serde_json::Value::Object(sweeps),
        independence,
        transfer_rates: transfer,
    };
    // append under "analysis" in report.json when a report exists
    if let Some(dir) = artifact_dir {
        let report_path = dir.join("report.json");
        if report_path.exists() {
            let mut report: AttackReport =
                serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
            report.analysis = Some(serde_json::to_value(&output)?);
            std::fs::write(report_path, report.to_json()?)?;
        }
    }
    Ok(output)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Clusters,
    Methods,
    Embedder,
    Clustering,
    Queries,
}

impl std::str::FromStr for AblationAxis {
    type Err = CemaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(Self::Clusters),
            "methods" => Ok(Self::Methods),
            "embedder" => Ok(Self::Embedder),
            "clustering" => Ok(Self::Clustering),
            "queries" => Ok(Self::Queries),
            other => Err(CemaError::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis_value: String,
    pub attack_queries: u64,
    pub report: AttackReport,
}

/// Run the pipeline once per axis value with shared seeds and evaluate each
/// run, producing a side-by-side table.
pub fn run_ablate(cfg: &RunConfig, axis: AblationAxis) -> Result<Vec<AblationRow>> {
    let variants: Vec<(String, RunConfig)> = match axis {
        AblationAxis::Clusters => [2usize, 3, 4]
            .iter()
            .map(|&k| {
                let mut c = cfg.clone();
                c.clustering.n_clusters = k;
                (k.to_string(), c)
            })
            .collect(),
        AblationAxis::Methods => vec![
            (
                "textbugger".to_string(),
                RunConfig {
                    attack_methods: vec![AttackMethod::TextBugger],
                    ..cfg.clone()
                },
            ),
            (
                "hotflip+fd+textbugger".to_string(),
                RunConfig {
                    attack_methods: vec![
                        AttackMethod::Hotflip,
                        AttackMethod::Fd,
                        AttackMethod::TextBugger,
                    ],
                    ..cfg.clone()
                },
            ),
        ],
        AblationAxis::Embedder => vec![
            (
                "hashed-ngram".to_string(),
                RunConfig {
                    embedder: EmbedderSpec::HashedNgram { dim: 256 },
                    ..cfg.clone()
                },
            ),
            (
                "one-hot".to_string(),
                RunConfig {
                    embedder: EmbedderSpec::OneHot,
                    ..cfg.clone()
                },
            ),
        ],
        AblationAxis::Clustering => vec![
            (
                "spectral".to_string(),
                with_cluster_method(cfg, crate::cluster::ClusterMethod::Spectral),
            ),
            (
                "kmeans".to_string(),
                with_cluster_method(cfg, crate::cluster::ClusterMethod::KMeans),
            ),
        ],
        AblationAxis::Queries => [10usize, 50, 100]
            .iter()
            .map(|&n| {
                let mut c = cfg.clone();
                c.auxiliary_size = n;
                (n.to_string(), c)
            })
            .collect(),
    };

    let mut rows = Vec::new();
    for (value, mut variant) in variants {
        variant.output_dir = cfg
            .output_dir
            .join("ablate")
            .join(format!("{axis:?}").to_lowercase())
            .join(&value);
        let output = run_attack(&variant)?;
        write_artifacts(&variant, &output)?;
        let report = run_evaluate(&variant, &variant.output_dir)?;
        rows.push(AblationRow {
            axis_value: value,
            attack_queries: output.attack_queries,
            report,
        });
    }
    let table_path = cfg.output_dir.join("ablation.json");
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(table_path, serde_json::to_string_pretty(&rows)?)?;
    Ok(rows)
}

fn with_cluster_method(cfg: &RunConfig, method: crate::cluster::ClusterMethod) -> RunConfig {
    let mut c = cfg.clone();
    c.clustering.method = method;
    c
}

/// Pull the first classification-task ASR out of a report, for summaries
/// and trend comparisons.
pub fn first_asr(report: &AttackReport) -> Option<f64> {
    report
        .tasks
        .iter()
        .find(|t| t.metric == "asr")
        .and_then(|t| t.value)
}

/// Mean BLEU of the first translation task, when present.
pub fn first_bleu(report: &AttackReport) -> Option<f64> {
    report
        .tasks
        .iter()
        .find(|t| t.metric == "bleu")
        .and_then(|t| t.value)
}
