//! Evaluation metrics: attack success rate, sentence BLEU, ROUGE-L drop,
//! and report assembly.
//!
//! BLEU is computed per sentence (geometric mean of modified n-gram
//! precisions up to order 4 with a 1e-9 floor for zero-match orders, plus
//! the standard brevity penalty) and reported as a mean over sentences.

use crate::error::{CemaError, Result};
use crate::text::Text;
use crate::victim::{query, QueryLedger, TaskKind, Victim};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const PRECISION_FLOOR: f64 = 1e-9;

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<String> = window.iter().map(|s| s.to_string()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with modified n-gram precision and brevity penalty.
/// An empty hypothesis scores 0; an empty reference is an error.
pub fn bleu(reference_tokens: &[&str], hypothesis_tokens: &[&str]) -> Result<f64> {
    if reference_tokens.is_empty() {
        return Err(CemaError::InvalidInput("empty BLEU reference".into()));
    }
    if hypothesis_tokens.is_empty() {
        return Ok(0.0);
    }
    let r = reference_tokens.len();
    let c = hypothesis_tokens.len();
    // short sentences cap the usable order so identical pairs score 1.0
    let max_order = 4.min(r).min(c);
    let mut log_sum = 0.0f64;
    for n in 1..=max_order {
        let ref_counts = ngram_counts(reference_tokens, n);
        let hyp_counts = ngram_counts(hypothesis_tokens, n);
        let total: usize = hyp_counts.values().sum();
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if matched == 0 {
            PRECISION_FLOOR
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let geo = (log_sum / max_order as f64).exp();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * geo)
}

/// BLEU over whitespace-split strings, for callers holding raw sentences.
pub fn bleu_str(reference: &str, hypothesis: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    bleu(&r, &h)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut dp = vec![0usize; b.len() + 1];
    for x in a {
        let mut prev = 0usize;
        for (j, y) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if x == y {
                prev + 1
            } else {
                dp[j + 1].max(dp[j])
            };
            prev = cur;
        }
    }
    dp[b.len()]
}

/// ROUGE-L F1 between a reference and a candidate summary.
pub fn rouge_l_f1(reference: &str, candidate: &str) -> f64 {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let c: Vec<&str> = candidate.split_whitespace().collect();
    if r.is_empty() || c.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&r, &c) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / c.len() as f64;
    let recall = lcs / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// ROUGE Drop Percentage: relative ROUGE-L F1 decrease of the adversarial
/// summary, clamped to [0,100]. Undefined (None) when the original summary
/// already scores zero.
pub fn rouge_drop(
    reference_summary: &str,
    original_summary: &str,
    adversarial_summary: &str,
) -> Option<f64> {
    let base = rouge_l_f1(reference_summary, original_summary);
    if base == 0.0 {
        return None;
    }
    let adv = rouge_l_f1(reference_summary, adversarial_summary);
    Some((100.0 * (base - adv) / base).clamp(0.0, 100.0))
}

/// Attack success rate in percent for a classification task: the share of
/// texts whose victim label changed. Missing adversarials (failed attacks)
/// count as unchanged.
pub fn asr(
    originals: &[Text],
    adversarials: &[Option<Text>],
    victim: &dyn Victim,
    task_id: &str,
    eval_ledger: &QueryLedger,
) -> Result<f64> {
    if originals.len() != adversarials.len() {
        return Err(CemaError::InvalidInput(format!(
            "{} originals vs {} adversarials",
            originals.len(),
            adversarials.len()
        )));
    }
    let tasks = victim.declare_tasks()?;
    let spec = tasks
        .iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| CemaError::MetricMismatch(format!("unknown task {task_id:?}")))?;
    if spec.kind != TaskKind::Classification {
        return Err(CemaError::MetricMismatch(format!(
            "ASR applies to classification tasks, {task_id:?} is {:?}",
            spec.kind
        )));
    }
    let mut flipped = 0usize;
    for (orig, adv) in originals.iter().zip(adversarials) {
        let Some(adv) = adv else { continue };
        let orig_label = query(victim, orig, eval_ledger)?
            .output_for(task_id)
            .map(str::to_string);
        let adv_label = query(victim, adv, eval_ledger)?
            .output_for(task_id)
            .map(str::to_string);
        if orig_label != adv_label {
            flipped += 1;
        }
    }
    Ok(100.0 * flipped as f64 / originals.len() as f64)
}

/// ASR from label pairs already gathered; used when the evaluation loop has
/// queried the victim once per text across all tasks.
pub fn asr_from_labels(pairs: &[(String, Option<String>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let flipped = pairs
        .iter()
        .filter(|(orig, adv)| adv.as_ref().is_some_and(|a| a != orig))
        .count();
    100.0 * flipped as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task_id: String,
    pub kind: TaskKind,
    /// "asr" (percent), "bleu" (mean sentence BLEU in [0,1]), or "rdp"
    /// (mean ROUGE drop percent; None when every base score was zero).
    pub metric: String,
    pub value: Option<f64>,
}

/// Schema version for report.json / report.csv.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub schema_version: u32,
    /// BLEU aggregation is per-sentence mean, flagged here explicitly.
    pub bleu_aggregation: String,
    pub tasks: Vec<TaskMetric>,
    pub mean_similarity: Option<f64>,
    pub total_queries: u64,
    pub eval_queries: u64,
    pub config_digest: String,
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub analysis: Option<serde_json::Value>,
}

impl AttackReport {
    pub fn new(
        tasks: Vec<TaskMetric>,
        mean_similarity: Option<f64>,
        total_queries: u64,
        eval_queries: u64,
        config_digest: String,
        master_seed: u64,
    ) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            bleu_aggregation: "per-sentence mean".into(),
            tasks,
            mean_similarity,
            total_queries,
            eval_queries,
            config_digest,
            master_seed,
            analysis: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat per-task CSV rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,kind,metric,value\n");
        for t in &self.tasks {
            let kind = match t.kind {
                TaskKind::Classification => "classification",
                TaskKind::Translation => "translation",
                TaskKind::Summarization => "summarization",
            };
            let value = t
                .value
                .map(|v| format!("{v}"))
                .unwrap_or_else(|| "null".into());
            out.push_str(&format!("{},{},{},{}\n", t.task_id, kind, t.metric, value));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_and_tokenize;
    use crate::victim::two_task_toy_victim;
    use std::collections::BTreeMap;

    #[test]
    fn bleu_identical_sentences() {
        let s: Vec<&str> = "one two three four five six seven eight nine ten"
            .split_whitespace()
            .collect();
        assert_eq!(bleu(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn bleu_disjoint_vocab_is_tiny() {
        let r: Vec<&str> = "a b c d e".split_whitespace().collect();
        let h: Vec<&str> = "v w x y z".split_whitespace().collect();
        assert!(bleu(&r, &h).unwrap() <= 1e-6);
    }

    #[test]
    fn bleu_matches_hand_oracle() {
        // ref "the cat sat on the mat", hyp "the cat sat on mat"
        // hand-derived modified precisions: 5/5, 3/4, 2/3, 1/2
        // brevity penalty exp(1 - 6/5)
        let expected = (1.0f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25) * (1.0f64 - 6.0 / 5.0).exp();
        let got = bleu_str("the cat sat on the mat", "the cat sat on mat").unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn bleu_clipping_oracle() {
        // ref "the cat", hyp "the the the cat": p1 = 2/4 (clipped), p2 = 1/3,
        // effective order 2, no brevity penalty
        let expected = (0.5f64 * (1.0 / 3.0)).sqrt();
        let got = bleu_str("the cat", "the the the cat").unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn bleu_brevity_penalty_oracle() {
        // all precisions 1, c=4 < r=5
        let expected = (1.0f64 - 5.0 / 4.0).exp();
        let got = bleu_str("the quick brown fox jumps", "the quick brown fox").unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn bleu_empty_cases() {
        assert_eq!(bleu_str("some reference", "").unwrap(), 0.0);
        assert!(bleu_str("", "hyp").is_err());
    }

    #[test]
    fn rouge_l_hand_lcs() {
        // LCS("a b c d", "a c d") = 3; P = 3/3, R = 3/4, F1 = 2*(1*0.75)/1.75
        let expected = 2.0 * (1.0 * 0.75) / 1.75;
        assert!((rouge_l_f1("a b c d", "a c d") - expected).abs() < 1e-12);
    }

    #[test]
    fn rouge_drop_arithmetic() {
        assert_eq!(rouge_drop("a b c", "a b c", "a b c"), Some(0.0));
        // R(orig) = 0.5, R(adv) = 0.25 -> 50%
        // construct via direct formula instead: use rouge scores directly
        let base = rouge_l_f1("a b c d", "a b x y");
        let adv = rouge_l_f1("a b c d", "a x y z");
        let got = rouge_drop("a b c d", "a b x y", "a x y z").unwrap();
        assert!((got - 100.0 * (base - adv) / base).abs() < 1e-12);
        // undefined when the original summary scores zero
        assert_eq!(rouge_drop("a b", "x y", "a b"), None);
    }

    #[test]
    fn asr_counts_failures_as_unchanged() {
        let lex = vec![
            ("pos".to_string(), vec!["good".to_string()]),
            ("neg".to_string(), vec!["bad".to_string()]),
        ];
        let victim = two_task_toy_victim(lex, BTreeMap::new()).unwrap();
        let originals: Vec<Text> = ["good day", "bad day", "good one", "bad one"]
            .iter()
            .map(|s| normalize_and_tokenize(s).unwrap())
            .collect();
        // flip three of four; last failed (None)
        let adversarials = vec![
            Some(normalize_and_tokenize("bad day").unwrap()),
            Some(normalize_and_tokenize("good day").unwrap()),
            Some(normalize_and_tokenize("bad one").unwrap()),
            None,
        ];
        let ledger = QueryLedger::unbounded();
        let got = asr(&originals, &adversarials, &victim, "sentiment-cls", &ledger).unwrap();
        assert_eq!(got, 75.0);
        // all failures -> 0
        let none: Vec<Option<Text>> = vec![None; 4];
        assert_eq!(
            asr(&originals, &none, &victim, "sentiment-cls", &ledger).unwrap(),
            0.0
        );
        // non-classification task rejected
        assert!(matches!(
            asr(&originals, &adversarials, &victim, "word-sub-translation", &ledger),
            Err(CemaError::MetricMismatch(_))
        ));
    }

    #[test]
    fn report_rendering() {
        let report = AttackReport::new(
            vec![
                TaskMetric {
                    task_id: "cls".into(),
                    kind: TaskKind::Classification,
                    metric: "asr".into(),
                    value: Some(65.0),
                },
                TaskMetric {
                    task_id: "mt".into(),
                    kind: TaskKind::Translation,
                    metric: "bleu".into(),
                    value: Some(0.41),
                },
            ],
            Some(0.91),
            100,
            400,
            "digest".into(),
            7,
        );
        let json = report.to_json().unwrap();
        let back: AttackReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let csv = report.to_csv();
        assert!(csv.contains("cls,classification,asr,65"));
        assert!(csv.contains("mt,translation,bleu,0.41"));
    }
}
