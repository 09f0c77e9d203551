//! Bootstrap substitute ensemble and transferability-oriented selection of
//! the final adversarial example.
//!
//! Each ensemble member trains on a without-replacement sample of 80% of
//! the labeled pairs. A candidate's transferability score counts the
//! members whose label it flips; ties on the score break by the primary
//! substitute's probability drop.

use crate::attacks::AdversarialCandidate;
use crate::error::{CemaError, Result};
use crate::substitute::{SubstituteModel, TrainingConfig};
use crate::text::Text;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Number of bootstrap substitute models.
    pub w: usize,
    pub sample_fraction: f64,
    pub base_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            w: 6,
            sample_fraction: 0.8,
            base_seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w < 1 {
            return Err(CemaError::Config("ensemble size w must be >= 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(CemaError::Config("sample_fraction must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Draw the member-k training subset: floor(fraction * n) pairs without
/// replacement, reproducible from base_seed + k. Single-label draws are
/// retried up to 5 times before giving up.
fn bootstrap_sample(
    dataset: &[(Text, u8)],
    cfg: &EnsembleConfig,
    k: usize,
) -> Result<Vec<(Text, u8)>> {
    let n = dataset.len();
    let take = ((cfg.sample_fraction * n as f64).floor() as usize).max(1);
    let seed = cfg.base_seed.wrapping_add(k as u64);
    for attempt in 0..=5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt * 0x9e37_79b9));
        let idx = sample(&mut rng, n, take);
        let subset: Vec<(Text, u8)> = idx.iter().map(|i| dataset[i].clone()).collect();
        let has0 = subset.iter().any(|(_, l)| *l == 0);
        let has1 = subset.iter().any(|(_, l)| *l == 1);
        if has0 && has1 {
            return Ok(subset);
        }
    }
    Err(CemaError::InvalidDataset(format!(
        "bootstrap sample {k} kept drawing a single label"
    )))
}

/// Train the w-member ensemble; member k trains with seed
/// `training_cfg.seed + 1 + k` on its own bootstrap subset.
pub fn train_ensemble(
    dataset: &[(Text, u8)],
    cfg: &EnsembleConfig,
    training_cfg: &TrainingConfig,
) -> Result<Vec<SubstituteModel>> {
    cfg.validate()?;
    if dataset.len() < 10 {
        return Err(CemaError::InvalidDataset(format!(
            "need at least 10 pairs, got {}",
            dataset.len()
        )));
    }
    let subsets: Vec<Vec<(Text, u8)>> = (0..cfg.w)
        .map(|k| bootstrap_sample(dataset, cfg, k))
        .collect::<Result<_>>()?;
    subsets
        .into_par_iter()
        .enumerate()
        .map(|(k, subset)| {
            let member_cfg = TrainingConfig {
                seed: training_cfg.seed.wrapping_add(1 + k as u64),
                ..training_cfg.clone()
            };
            crate::substitute::train_any_size(&subset, &member_cfg)
        })
        .collect()
}

/// Per-candidate, per-member flip indicators and their per-candidate totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    /// indicator[k][j] = 1 iff member k labels candidate j differently from
    /// the original text.
    pub indicator: Vec<Vec<u8>>,
    /// totals[j] = sum over members of indicator[k][j].
    pub totals: Vec<u32>,
}

pub fn transferability_scores(
    models: &[SubstituteModel],
    original: &Text,
    candidates: &[AdversarialCandidate],
) -> Result<TransferMatrix> {
    if models.is_empty() {
        return Err(CemaError::InvalidInput("need at least one model".into()));
    }
    let indicator: Vec<Vec<u8>> = models
        .iter()
        .map(|m| {
            let base = m.predict_label(original);
            candidates
                .iter()
                .map(|c| u8::from(m.predict_label(&c.text) != base))
                .collect()
        })
        .collect();
    let totals = (0..candidates.len())
        .map(|j| indicator.iter().map(|row| row[j] as u32).sum())
        .collect();
    Ok(TransferMatrix { indicator, totals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: Option<AdversarialCandidate>,
    /// Transferability totals per candidate.
    pub scores: Vec<u32>,
    /// Primary-substitute probability drop per candidate, clamped to [0,1).
    pub tie_break: Vec<f64>,
    /// Winning candidate index, when any candidate exists.
    pub h: Option<usize>,
}

/// Pick the final adversarial example by maximizing transferability total
/// plus the primary substitute's probability drop. Exact ties break toward
/// the lower method ordinal, then the lower candidate index.
pub fn select_final(
    primary: &SubstituteModel,
    models: &[SubstituteModel],
    original: &Text,
    candidates: &[AdversarialCandidate],
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Ok(SelectionResult {
            chosen: None,
            scores: vec![],
            tie_break: vec![],
            h: None,
        });
    }
    let matrix = transferability_scores(models, original, candidates)?;
    let base_label = primary.predict_label(original);
    let p_orig = label_proba(primary, original, base_label);
    let tie_break: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let drop = p_orig - label_proba(primary, &c.text, base_label);
            // candidates flipped the primary, so the drop is positive up to
            // numeric noise; clamp borderline negatives at zero
            drop.clamp(0.0, 1.0 - f64::EPSILON)
        })
        .collect();
    let h = (0..candidates.len())
        .max_by(|&a, &b| {
            let sa = matrix.totals[a] as f64 + tie_break[a];
            let sb = matrix.totals[b] as f64 + tie_break[b];
            sa.total_cmp(&sb)
                .then_with(|| {
                    candidates[b]
                        .method_id
                        .ordinal()
                        .cmp(&candidates[a].method_id.ordinal())
                })
                .then(b.cmp(&a))
        })
        .unwrap();
    Ok(SelectionResult {
        chosen: Some(candidates[h].clone()),
        scores: matrix.totals,
        tie_break,
        h: Some(h),
    })
}

fn label_proba(model: &SubstituteModel, text: &Text, label: u8) -> f64 {
    let p = model.predict_proba(text);
    if label == 1 {
        p
    } else {
        1.0 - p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackMethod;
    use crate::substitute::fixtures::separable_corpus;
    use crate::text::normalize_and_tokenize;
    use rand::Rng;

    fn candidate(raw: &str, method: AttackMethod) -> AdversarialCandidate {
        AdversarialCandidate {
            text: normalize_and_tokenize(raw).unwrap(),
            method_id: method,
            similarity: 0.9,
            flipped_primary: true,
            edits: vec![],
        }
    }

    #[test]
    fn ensemble_trains_on_eighty_percent_samples() {
        let d = separable_corpus(100, 3);
        let cfg = EnsembleConfig::default();
        for k in 0..cfg.w {
            assert_eq!(bootstrap_sample(&d, &cfg, k).unwrap().len(), 80);
        }
        let models = train_ensemble(&d, &cfg, &TrainingConfig::default()).unwrap();
        assert_eq!(models.len(), 6);
    }

    #[test]
    fn degenerate_config_uses_full_dataset() {
        let d = separable_corpus(20, 3);
        let cfg = EnsembleConfig {
            w: 1,
            sample_fraction: 1.0,
            base_seed: 0,
        };
        assert_eq!(bootstrap_sample(&d, &cfg, 0).unwrap().len(), 20);
    }

    #[test]
    fn ensemble_training_is_reproducible() {
        let d = separable_corpus(40, 3);
        let cfg = EnsembleConfig {
            w: 3,
            ..EnsembleConfig::default()
        };
        let tcfg = TrainingConfig {
            epochs: 2,
            ..TrainingConfig::default()
        };
        let a = train_ensemble(&d, &cfg, &tcfg).unwrap();
        let b = train_ensemble(&d, &cfg, &tcfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transfer_scores_match_hand_computation() {
        let d = separable_corpus(60, 3);
        let tcfg = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::default()
        };
        let models = train_ensemble(
            &d,
            &EnsembleConfig {
                w: 4,
                ..EnsembleConfig::default()
            },
            &tcfg,
        )
        .unwrap();
        let original = normalize_and_tokenize("zebra river stone cloud").unwrap();
        let cands = vec![
            candidate("river stone cloud amber", AttackMethod::Hotflip),
            candidate("zebra river stone cloud", AttackMethod::Fd),
        ];
        let m = transferability_scores(&models, &original, &cands).unwrap();
        // hand recomputation from the individual models
        for (k, model) in models.iter().enumerate() {
            let base = model.predict_label(&original);
            for (j, c) in cands.iter().enumerate() {
                let expect = u8::from(model.predict_label(&c.text) != base);
                assert_eq!(m.indicator[k][j], expect);
            }
        }
        // identical-to-original candidate never flips anyone
        assert_eq!(m.totals[1], 0);
        for j in 0..cands.len() {
            let total: u32 = m.indicator.iter().map(|r| r[j] as u32).sum();
            assert_eq!(m.totals[j], total);
        }
    }

    #[test]
    fn selection_matches_paper_arithmetic() {
        // I = [3,5,5], p_c = [0.4,0.2,0.6] -> h = 2
        let scores = [3u32, 5, 5];
        let tie = [0.4f64, 0.2, 0.6];
        let h = (0..3)
            .max_by(|&a, &b| {
                (scores[a] as f64 + tie[a]).total_cmp(&(scores[b] as f64 + tie[b]))
            })
            .unwrap();
        assert_eq!(h, 2);
    }

    #[test]
    fn select_final_equals_exhaustive_oracle() {
        let d = separable_corpus(80, 3);
        let primary = crate::substitute::train(&d, &TrainingConfig::default()).unwrap();
        let models = train_ensemble(&d, &EnsembleConfig::default(), &TrainingConfig::default())
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let fillers = ["river", "stone", "cloud", "amber", "field", "quiet"];
        for _ in 0..100 {
            let original = normalize_and_tokenize("zebra river stone cloud").unwrap();
            let n_cand = rng.gen_range(1..=4usize);
            let methods = [AttackMethod::Hotflip, AttackMethod::Fd, AttackMethod::TextBugger];
            let cands: Vec<AdversarialCandidate> = (0..n_cand)
                .map(|_| {
                    let words: Vec<&str> = (0..4)
                        .map(|_| fillers[rng.gen_range(0..fillers.len())])
                        .collect();
                    candidate(&words.join(" "), methods[rng.gen_range(0..3)])
                })
                .collect();
            let result = select_final(&primary, &models, &original, &cands).unwrap();
            // exhaustive oracle over (I + p_c) with the documented tie rule
            let mut best: Option<usize> = None;
            for j in 0..cands.len() {
                let sj = result.scores[j] as f64 + result.tie_break[j];
                let better = match best {
                    None => true,
                    Some(b) => {
                        let sb = result.scores[b] as f64 + result.tie_break[b];
                        sj > sb
                            || (sj == sb
                                && (cands[j].method_id.ordinal() < cands[b].method_id.ordinal()
                                    || (cands[j].method_id.ordinal()
                                        == cands[b].method_id.ordinal()
                                        && j < b)))
                    }
                };
                if better {
                    best = Some(j);
                }
            }
            assert_eq!(result.h, best);
        }
    }

    #[test]
    fn empty_candidates_yield_none() {
        let d = separable_corpus(40, 3);
        let primary = crate::substitute::train(&d, &TrainingConfig::default()).unwrap();
        let models = vec![primary.clone()];
        let original = normalize_and_tokenize("zebra river").unwrap();
        let r = select_final(&primary, &models, &original, &[]).unwrap();
        assert!(r.chosen.is_none());
        assert!(r.h.is_none());
    }

    #[test]
    fn single_candidate_always_chosen() {
        let d = separable_corpus(40, 3);
        let primary = crate::substitute::train(&d, &TrainingConfig::default()).unwrap();
        let models = vec![primary.clone()];
        let original = normalize_and_tokenize("zebra river").unwrap();
        let cands = vec![candidate("river cloud", AttackMethod::TextBugger)];
        let r = select_final(&primary, &models, &original, &cands).unwrap();
        assert_eq!(r.h, Some(0));
        assert!(r.chosen.is_some());
    }

    #[test]
    fn integral_score_dominates_tie_break() {
        // any candidate with strictly larger I beats any smaller-I candidate
        for i_a in 0..6u32 {
            for i_b in (i_a + 1)..=6 {
                let a = i_a as f64 + 0.999;
                let b = i_b as f64 + 0.0;
                assert!(b > a);
            }
        }
    }
}
