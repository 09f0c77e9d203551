//! Black-box multi-task victim interface with strict query accounting.
//!
//! One query carries one text and returns the outputs of every declared task,
//! so the ledger counts texts, not task invocations. Attack-phase and
//! evaluation-phase queries live in separate ledgers.

use crate::error::{CemaError, Result};
use crate::text::Text;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Translation,
    Summarization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    /// Non-empty for classification tasks only.
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

/// One output per declared task, in the victim's declared task order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimResponse {
    pub outputs: Vec<(String, String)>,
}

impl VictimResponse {
    pub fn output_for(&self, task_id: &str) -> Option<&str> {
        self.outputs
            .iter()
            .find(|(id, _)| id == task_id)
            .map(|(_, text)| text.as_str())
    }
}

/// Strict victim-query counter. `total_queries` never decreases; a budget,
/// when set, is enforced before a query is transmitted.
#[derive(Debug)]
pub struct QueryLedger {
    reserved: AtomicU64,
    total: AtomicU64,
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn unbounded() -> Self {
        Self {
            reserved: AtomicU64::new(0),
            total: AtomicU64::new(0),
            budget: None,
        }
    }

    pub fn with_budget(budget: u64) -> Self {
        Self {
            reserved: AtomicU64::new(0),
            total: AtomicU64::new(0),
            budget: Some(budget),
        }
    }

    pub fn total_queries(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    fn reserve(&self) -> Result<()> {
        match self.budget {
            None => {
                self.reserved.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Some(b) => self
                .reserved
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |r| {
                    if r < b {
                        Some(r + 1)
                    } else {
                        None
                    }
                })
                .map(|_| ())
                .map_err(|_| CemaError::BudgetExceeded),
        }
    }

    fn commit(&self) {
        self.total.fetch_add(1, Ordering::SeqCst);
    }

    fn rollback(&self) {
        self.reserved.fetch_sub(1, Ordering::SeqCst);
    }
}

/// A black-box multi-task victim. Implementations must be pure functions of
/// their configuration and the input text (toy victims) or proxies to a
/// remote endpoint.
pub trait Victim: Send + Sync {
    fn declare_tasks(&self) -> Result<Vec<TaskSpec>>;
    /// Raw response without ledger accounting; use [`query`] instead.
    fn respond(&self, text: &Text) -> Result<VictimResponse>;
}

/// Query the victim once, charging exactly one ledger unit for all task
/// outputs. Transport failures roll the reservation back and leave
/// `total_queries` untouched.
pub fn query(victim: &dyn Victim, text: &Text, ledger: &QueryLedger) -> Result<VictimResponse> {
    ledger.reserve()?;
    match victim.respond(text) {
        Ok(resp) => {
            ledger.commit();
            Ok(resp)
        }
        Err(e) => {
            ledger.rollback();
            Err(e)
        }
    }
}

fn match_key(surface: &str) -> String {
    surface
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Deterministic lexicon classifier: label = argmax of lexicon-hit count,
/// ties broken by declaration order, zero hits fall back to the default
/// label (the first declared label).
#[derive(Debug, Clone)]
pub struct LexiconClassifierTask {
    /// (label, member words) in declaration order.
    pub lexicon: Vec<(String, Vec<String>)>,
}

impl LexiconClassifierTask {
    pub fn new(lexicon: Vec<(String, Vec<String>)>) -> Result<Self> {
        if lexicon.is_empty() || lexicon.iter().all(|(_, words)| words.is_empty()) {
            return Err(CemaError::InvalidVictimConfig(
                "lexicon classifier needs at least one label with words".into(),
            ));
        }
        Ok(Self { lexicon })
    }

    pub fn classify(&self, text: &Text) -> String {
        let mut best_label = self.lexicon[0].0.as_str();
        let mut best_hits = 0usize;
        for (label, words) in &self.lexicon {
            let hits = text
                .tokens()
                .iter()
                .filter(|t| {
                    let key = match_key(&t.surface);
                    words.iter().any(|w| *w == key)
                })
                .count();
            if hits > best_hits {
                best_hits = hits;
                best_label = label;
            }
        }
        best_label.to_string()
    }

    pub fn labels(&self) -> Vec<String> {
        self.lexicon.iter().map(|(l, _)| l.clone()).collect()
    }
}

/// Word-for-word dictionary translator; out-of-vocabulary tokens pass
/// through unchanged.
#[derive(Debug, Clone)]
pub struct DictionaryTranslatorTask {
    pub dictionary: BTreeMap<String, String>,
}

impl DictionaryTranslatorTask {
    pub fn new(dictionary: BTreeMap<String, String>) -> Self {
        Self { dictionary }
    }

    pub fn translate(&self, text: &Text) -> String {
        text.tokens()
            .iter()
            .map(|t| {
                let key = match_key(&t.surface);
                self.dictionary
                    .get(&key)
                    .cloned()
                    .unwrap_or_else(|| t.surface.clone())
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone)]
pub enum ToyTask {
    Lexicon(LexiconClassifierTask),
    Dictionary(DictionaryTranslatorTask),
}

/// In-process multi-task victim built from toy task implementations.
pub struct ToyVictim {
    tasks: Vec<(TaskSpec, ToyTask)>,
}

impl ToyVictim {
    pub fn new(tasks: Vec<(TaskSpec, ToyTask)>) -> Self {
        Self { tasks }
    }
}

impl Victim for ToyVictim {
    fn declare_tasks(&self) -> Result<Vec<TaskSpec>> {
        Ok(self.tasks.iter().map(|(spec, _)| spec.clone()).collect())
    }

    fn respond(&self, text: &Text) -> Result<VictimResponse> {
        let outputs = self
            .tasks
            .iter()
            .map(|(spec, task)| {
                let out = match task {
                    ToyTask::Lexicon(lex) => lex.classify(text),
                    ToyTask::Dictionary(dict) => dict.translate(text),
                };
                (spec.task_id.clone(), out)
            })
            .collect();
        Ok(VictimResponse { outputs })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 100,
        }
    }
}

#[derive(Deserialize)]
struct WireTaskDecl {
    tasks: Vec<WireTask>,
}

#[derive(Deserialize)]
struct WireTask {
    task_id: String,
    kind: String,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct WireResponse {
    outputs: Vec<WireOutput>,
}

#[derive(Deserialize)]
struct WireOutput {
    task_id: String,
    text: String,
}

/// HTTP adapter for a remote victim speaking the JSON wire protocol:
/// GET `{url}` declares tasks, POST `{url}` with `{"text": ...}` answers one
/// query across all tasks.
pub struct RemoteVictim {
    endpoint_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    // task declaration is fetched once and reused across queries
    tasks: std::sync::OnceLock<Vec<TaskSpec>>,
}

impl RemoteVictim {
    pub fn new(endpoint_url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(timeout)
            .build();
        Self {
            endpoint_url: endpoint_url.into(),
            agent,
            retry,
            tasks: std::sync::OnceLock::new(),
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut last = None;
        for attempt in 0..=self.retry.max_retries {
            match call() {
                Ok(v) => return Ok(v),
                Err(e @ CemaError::Protocol(_)) => return Err(e),
                Err(e) => last = Some(e),
            }
            if attempt < self.retry.max_retries {
                std::thread::sleep(Duration::from_millis(self.retry.backoff_ms));
            }
        }
        Err(last.unwrap_or_else(|| CemaError::VictimUnavailable("no attempt made".into())))
    }
}

impl Victim for RemoteVictim {
    fn declare_tasks(&self) -> Result<Vec<TaskSpec>> {
        if let Some(cached) = self.tasks.get() {
            return Ok(cached.clone());
        }
        let decl: WireTaskDecl = self.with_retries(|| {
            let resp = self
                .agent
                .get(&self.endpoint_url)
                .call()
                .map_err(|e| CemaError::VictimUnavailable(e.to_string()))?;
            resp.into_json()
                .map_err(|e| CemaError::Protocol(format!("bad task declaration: {e}")))
        })?;
        if decl.tasks.is_empty() {
            return Err(CemaError::VictimUnavailable(
                "remote victim declares zero tasks".into(),
            ));
        }
        let specs: Vec<TaskSpec> = decl
            .tasks
            .into_iter()
            .map(|t| {
                let kind = match t.kind.as_str() {
                    "classification" => TaskKind::Classification,
                    "translation" => TaskKind::Translation,
                    "summarization" => TaskKind::Summarization,
                    other => {
                        return Err(CemaError::Protocol(format!("unknown task kind {other:?}")))
                    }
                };
                Ok(TaskSpec {
                    task_id: t.task_id,
                    kind,
                    labels: t.labels.unwrap_or_default(),
                    notes: String::new(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(self.tasks.get_or_init(|| specs).clone())
    }

    fn respond(&self, text: &Text) -> Result<VictimResponse> {
        let tasks = self.declare_tasks()?;
        let wire: WireResponse = self.with_retries(|| {
            let resp = self
                .agent
                .post(&self.endpoint_url)
                .send_json(serde_json::json!({ "text": text.raw() }))
                .map_err(|e| match e {
                    ureq::Error::Status(code, _) => {
                        CemaError::VictimUnavailable(format!("remote victim returned HTTP {code}"))
                    }
                    ureq::Error::Transport(t) => CemaError::VictimUnavailable(t.to_string()),
                })?;
            resp.into_json()
                .map_err(|e| CemaError::Protocol(format!("bad query response: {e}")))
        })?;
        if wire.outputs.len() != tasks.len() {
            return Err(CemaError::Protocol(format!(
                "expected {} outputs, got {}",
                tasks.len(),
                wire.outputs.len()
            )));
        }
        for (spec, out) in tasks.iter().zip(&wire.outputs) {
            if spec.task_id != out.task_id {
                return Err(CemaError::Protocol(format!(
                    "task order mismatch: expected {:?}, got {:?}",
                    spec.task_id, out.task_id
                )));
            }
            if out.text.is_empty() {
                return Err(CemaError::Protocol(format!(
                    "empty output for task {:?}",
                    spec.task_id
                )));
            }
        }
        Ok(VictimResponse {
            outputs: wire
                .outputs
                .into_iter()
                .map(|o| (o.task_id, o.text))
                .collect(),
        })
    }
}

/// Convenience constructor used across tests and the toy benchmark: a
/// sentiment lexicon classifier plus a word-substitution translator.
pub fn two_task_toy_victim(
    lexicon: Vec<(String, Vec<String>)>,
    dictionary: BTreeMap<String, String>,
) -> Result<ToyVictim> {
    let lex = LexiconClassifierTask::new(lexicon)?;
    let labels = lex.labels();
    Ok(ToyVictim::new(vec![
        (
            TaskSpec {
                task_id: "sentiment-cls".into(),
                kind: TaskKind::Classification,
                labels,
                notes: "lexicon hit-count classifier".into(),
            },
            ToyTask::Lexicon(lex),
        ),
        (
            TaskSpec {
                task_id: "word-sub-translation".into(),
                kind: TaskKind::Translation,
                labels: vec![],
                notes: "word-for-word dictionary translation".into(),
            },
            ToyTask::Dictionary(DictionaryTranslatorTask::new(dictionary)),
        ),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_and_tokenize;

    fn lex() -> Vec<(String, Vec<String>)> {
        vec![
            ("pos".into(), vec!["good".into(), "great".into()]),
            ("neg".into(), vec!["bad".into(), "awful".into()]),
        ]
    }

    fn dict() -> BTreeMap<String, String> {
        [("cat", "chat"), ("the", "le")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn two_task_declaration() {
        let v = two_task_toy_victim(lex(), dict()).unwrap();
        let tasks = v.declare_tasks().unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].task_id, "sentiment-cls");
        assert_eq!(tasks[1].task_id, "word-sub-translation");
        // ordering is stable
        assert_eq!(v.declare_tasks().unwrap(), tasks);
    }

    #[test]
    fn lexicon_hit_counting() {
        let task = LexiconClassifierTask::new(lex()).unwrap();
        let t = normalize_and_tokenize("a good great day").unwrap();
        assert_eq!(task.classify(&t), "pos");
        // tie breaks toward declaration order
        let t = normalize_and_tokenize("bad good").unwrap();
        assert_eq!(task.classify(&t), "pos");
        // zero hits fall back to default label
        let t = normalize_and_tokenize("the the the").unwrap();
        assert_eq!(task.classify(&t), "pos");
    }

    #[test]
    fn empty_lexicon_rejected() {
        assert!(matches!(
            LexiconClassifierTask::new(vec![]),
            Err(CemaError::InvalidVictimConfig(_))
        ));
    }

    #[test]
    fn dictionary_translation_with_oov_passthrough() {
        let task = DictionaryTranslatorTask::new(dict());
        let t = normalize_and_tokenize("the cat").unwrap();
        assert_eq!(task.translate(&t), "le chat");
        let t = normalize_and_tokenize("xyzzy cat").unwrap();
        assert_eq!(task.translate(&t), "xyzzy chat");
        let t = normalize_and_tokenize("teh cat").unwrap();
        assert_eq!(task.translate(&t), "teh chat");
    }

    #[test]
    fn ledger_counts_one_per_text() {
        let v = two_task_toy_victim(lex(), dict()).unwrap();
        let ledger = QueryLedger::unbounded();
        let t = normalize_and_tokenize("i love this").unwrap();
        for _ in 0..100 {
            query(&v, &t, &ledger).unwrap();
        }
        assert_eq!(ledger.total_queries(), 100);
    }

    #[test]
    fn budget_zero_rejected_before_transmission() {
        let v = two_task_toy_victim(lex(), dict()).unwrap();
        let ledger = QueryLedger::with_budget(0);
        let t = normalize_and_tokenize("hi").unwrap();
        assert!(matches!(
            query(&v, &t, &ledger),
            Err(CemaError::BudgetExceeded)
        ));
        assert_eq!(ledger.total_queries(), 0);
    }

    #[test]
    fn budget_enforced_at_limit() {
        let v = two_task_toy_victim(lex(), dict()).unwrap();
        let ledger = QueryLedger::with_budget(3);
        let t = normalize_and_tokenize("hi there").unwrap();
        for _ in 0..3 {
            query(&v, &t, &ledger).unwrap();
        }
        assert!(matches!(
            query(&v, &t, &ledger),
            Err(CemaError::BudgetExceeded)
        ));
        assert_eq!(ledger.total_queries(), 3);
    }
}
