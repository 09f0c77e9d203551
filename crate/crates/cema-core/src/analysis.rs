//! Empirical checks of the multi-method success claims: union-probability
//! monotonicity in the number of attack methods, pairwise independence of
//! method successes, and the deep-level transfer-rate measurement.

use crate::error::{CemaError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Dependence {
    Independent,
    /// Gaussian copula: one shared standard-normal latent with per-method
    /// thresholds, correlation `rho`.
    SharedLatent { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSimConfig {
    /// Per-method success probabilities, one per method (length = u_max).
    pub success_probs: Vec<f64>,
    pub trials: u64,
    pub dependence: Dependence,
    pub seed: u64,
}

impl EventSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.success_probs.is_empty() {
            return Err(CemaError::InvalidInput("no success probabilities".into()));
        }
        if self.success_probs.iter().any(|p| !(0.0 < *p && *p < 1.0)) {
            return Err(CemaError::InvalidInput(
                "success probabilities must lie in (0,1)".into(),
            ));
        }
        if self.trials < 10_000 {
            return Err(CemaError::InvalidInput(
                "need at least 10^4 trials".into(),
            ));
        }
        if let Dependence::SharedLatent { rho } = self.dependence {
            if !(0.0..=1.0).contains(&rho) {
                return Err(CemaError::InvalidInput("rho must be in [0,1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionEstimate {
    pub u: usize,
    pub estimate: f64,
    pub std_err: f64,
    /// 1 - prod(1 - p_j), present in independent mode only.
    pub closed_form: Option<f64>,
}

/// Monte Carlo estimates of P(at least one of the first u methods succeeds)
/// for u = 1..=u_max. Per-trial union indicators are monotone in u, so the
/// estimate sequence is non-decreasing by construction.
pub fn simulate_union_prob(cfg: &EventSimConfig) -> Result<Vec<UnionEstimate>> {
    cfg.validate()?;
    let u_max = cfg.success_probs.len();
    let trials = cfg.trials;
    let mut hits = vec![0u64; u_max];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    match &cfg.dependence {
        Dependence::Independent => {
            for _ in 0..trials {
                let mut any = false;
                for (j, &p) in cfg.success_probs.iter().enumerate() {
                    if rng.gen::<f64>() < p {
                        any = true;
                    }
                    if any {
                        hits[j] += 1;
                    }
                }
            }
        }
        Dependence::SharedLatent { rho } => {
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            let thresholds: Vec<f64> = cfg
                .success_probs
                .iter()
                .map(|&p| normal.inverse_cdf(p))
                .collect();
            let sr = rho.sqrt();
            let si = (1.0 - rho).sqrt();
            for _ in 0..trials {
                let shared: f64 = StandardNormal.sample(&mut rng);
                let mut any = false;
                for (j, &t) in thresholds.iter().enumerate() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let z = sr * shared + si * eps;
                    if z < t {
                        any = true;
                    }
                    if any {
                        hits[j] += 1;
                    }
                }
            }
        }
    }

    let estimates = hits
        .iter()
        .enumerate()
        .map(|(j, &h)| {
            let p_hat = h as f64 / trials as f64;
            let std_err = (p_hat * (1.0 - p_hat) / trials as f64).sqrt();
            let closed_form = match cfg.dependence {
                Dependence::Independent => Some(
                    1.0 - cfg.success_probs[..=j]
                        .iter()
                        .map(|p| 1.0 - p)
                        .product::<f64>(),
                ),
                Dependence::SharedLatent { .. } => None,
            };
            UnionEstimate {
                u: j + 1,
                estimate: p_hat,
                std_err,
                closed_form,
            }
        })
        .collect();
    Ok(estimates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceRow {
    pub method_a: usize,
    pub method_b: usize,
    pub p_a: f64,
    pub p_b: f64,
    pub p_ab: f64,
    /// P(A)*P(B) - P(AB).
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTable {
    pub rows: Vec<IndependenceRow>,
    pub average_deviation: f64,
    pub average_abs_deviation: f64,
}

/// Pairwise independence check over per-method success sets of victim-text
/// ids drawn from a universe of `universe_size` texts.
pub fn independence_table(
    success_sets: &[HashSet<usize>],
    universe_size: usize,
) -> Result<IndependenceTable> {
    if universe_size == 0 {
        return Err(CemaError::InvalidInput("empty text universe".into()));
    }
    if success_sets.len() < 2 {
        return Err(CemaError::InvalidInput(
            "need at least two methods for pairwise independence".into(),
        ));
    }
    let n = universe_size as f64;
    let mut rows = Vec::new();
    for a in 0..success_sets.len() {
        for b in (a + 1)..success_sets.len() {
            let p_a = success_sets[a].len() as f64 / n;
            let p_b = success_sets[b].len() as f64 / n;
            let p_ab = success_sets[a].intersection(&success_sets[b]).count() as f64 / n;
            rows.push(IndependenceRow {
                method_a: a,
                method_b: b,
                p_a,
                p_b,
                p_ab,
                deviation: p_a * p_b - p_ab,
            });
        }
    }
    let average_deviation = rows.iter().map(|r| r.deviation).sum::<f64>() / rows.len() as f64;
    let average_abs_deviation =
        rows.iter().map(|r| r.deviation.abs()).sum::<f64>() / rows.len() as f64;
    Ok(IndependenceTable {
        rows,
        average_deviation,
        average_abs_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRateRow {
    /// Number of ensemble members the candidate flipped.
    pub flipped_substitutes: u32,
    pub texts: u64,
    pub victim_flips: u64,
    pub victim_flip_rate: f64,
}

/// Empirical P(victim flips | candidate flipped k substitutes), from
/// per-text (k, victim-flipped) observations.
pub fn transfer_rate_report(observations: &[(u32, bool)], w: u32) -> Vec<TransferRateRow> {
    let mut rows = Vec::new();
    for k in 0..=w {
        let bucket: Vec<&(u32, bool)> =
            observations.iter().filter(|(i, _)| *i == k).collect();
        if bucket.is_empty() {
            continue;
        }
        let texts = bucket.len() as u64;
        let victim_flips = bucket.iter().filter(|(_, f)| *f).count() as u64;
        rows.push(TransferRateRow {
            flipped_substitutes: k,
            texts,
            victim_flips,
            victim_flip_rate: victim_flips as f64 / texts as f64,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(probs: &[f64], dep: Dependence) -> EventSimConfig {
        EventSimConfig {
            success_probs: probs.to_vec(),
            trials: 100_000,
            dependence: dep,
            seed: 42,
        }
    }

    #[test]
    fn independent_closed_form_two_methods() {
        let est = simulate_union_prob(&cfg(&[0.3, 0.3], Dependence::Independent)).unwrap();
        assert_eq!(est[1].closed_form, Some(1.0 - 0.7 * 0.7));
        assert!((est[1].closed_form.unwrap() - 0.51).abs() < 1e-12);
        let diff = (est[1].estimate - 0.51).abs();
        assert!(diff < 3.0 * est[1].std_err.max(1e-6), "estimate off: {diff}");
    }

    #[test]
    fn single_method_closed_form_is_p() {
        let est = simulate_union_prob(&cfg(&[0.4], Dependence::Independent)).unwrap();
        assert_eq!(est[0].closed_form, Some(0.4));
    }

    #[test]
    fn shared_latent_reduces_union_but_stays_monotone() {
        let dep = simulate_union_prob(&cfg(&[0.3, 0.3], Dependence::SharedLatent { rho: 0.9 }))
            .unwrap();
        assert!(dep[1].estimate < 0.51);
        assert!(dep[1].estimate >= dep[0].estimate);
        // marginals preserved within sampling error
        assert!((dep[0].estimate - 0.3).abs() < 4.0 * dep[0].std_err);
    }

    #[test]
    fn estimates_monotone_in_u() {
        for dep in [Dependence::Independent, Dependence::SharedLatent { rho: 0.5 }] {
            let est = simulate_union_prob(&cfg(&[0.1, 0.2, 0.3, 0.15], dep)).unwrap();
            for pair in est.windows(2) {
                assert!(pair[1].estimate >= pair[0].estimate);
            }
        }
    }

    #[test]
    fn closed_form_and_monte_carlo_agree() {
        let est = simulate_union_prob(&cfg(&[0.1, 0.25, 0.4], Dependence::Independent)).unwrap();
        for e in est {
            let cf = e.closed_form.unwrap();
            assert!(
                (e.estimate - cf).abs() < 4.0 * e.std_err.max(1e-6),
                "u={} estimate {} vs closed form {cf}",
                e.u,
                e.estimate
            );
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(simulate_union_prob(&EventSimConfig {
            success_probs: vec![],
            trials: 100_000,
            dependence: Dependence::Independent,
            seed: 0,
        })
        .is_err());
        assert!(simulate_union_prob(&EventSimConfig {
            success_probs: vec![0.5],
            trials: 100,
            dependence: Dependence::Independent,
            seed: 0,
        })
        .is_err());
        assert!(simulate_union_prob(&EventSimConfig {
            success_probs: vec![1.5],
            trials: 100_000,
            dependence: Dependence::Independent,
            seed: 0,
        })
        .is_err());
    }

    #[test]
    fn independence_disjoint_half_sets() {
        let a: HashSet<usize> = (0..50).collect();
        let b: HashSet<usize> = (50..100).collect();
        let t = independence_table(&[a, b], 100).unwrap();
        assert_eq!(t.rows[0].p_ab, 0.0);
        assert!((t.rows[0].deviation - 0.25).abs() < 1e-12);
    }

    #[test]
    fn independence_identical_half_sets() {
        let a: HashSet<usize> = (0..50).collect();
        let t = independence_table(&[a.clone(), a], 100).unwrap();
        assert!((t.rows[0].deviation - (0.25 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn independence_of_independent_samples_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000usize;
        let a: HashSet<usize> = (0..n).filter(|_| rng.gen::<f64>() < 0.5).collect();
        let b: HashSet<usize> = (0..n).filter(|_| rng.gen::<f64>() < 0.5).collect();
        let t = independence_table(&[a, b], n).unwrap();
        assert!(t.rows[0].deviation.abs() < 0.03);
    }

    #[test]
    fn independence_empty_universe_rejected() {
        let a: HashSet<usize> = HashSet::new();
        assert!(independence_table(&[a.clone(), a], 0).is_err());
    }

    #[test]
    fn transfer_table_shapes() {
        let obs = vec![(0u32, false), (0, false), (2, true), (6, true)];
        let rows = transfer_rate_report(&obs, 6);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].flipped_substitutes, 0);
        assert_eq!(rows[0].victim_flip_rate, 0.0);
        assert_eq!(rows[2].victim_flip_rate, 1.0);

        let all_zero = vec![(0u32, false); 5];
        assert_eq!(transfer_rate_report(&all_zero, 6).len(), 1);
    }
}
