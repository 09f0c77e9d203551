//! Word-level gradient attack: at the most salient position, pick the
//! vocabulary word maximizing the first-order loss increase, exactly
//! re-score the top few, substitute, and iterate.

use super::{
    estimate_from_grads, exact_loss_after, position_salience, AdversarialCandidate,
    AttackConstraints, AttackMethod, AttackState,
};
use crate::error::Result;
use crate::represent::Embedder;
use crate::substitute::SubstituteModel;
use crate::text::{Perturbation, Text};

const EXACT_RESCORE_TOP: usize = 10;

pub fn fd_attack(
    model: &SubstituteModel,
    embedder: &dyn Embedder,
    text: &Text,
    constraints: &AttackConstraints,
) -> Result<Option<AdversarialCandidate>> {
    constraints.validate()?;
    if model.vocab_size() <= 2 {
        // OOV row plus at most one real word: no alternative to substitute
        return Ok(None);
    }
    let mut state = AttackState::new(model, text, constraints);
    let mut edited_positions: Vec<usize> = Vec::new();

    while state.edits.len() < state.max_edits && !state.flipped() {
        if !state.budget.charge(1) {
            break;
        }
        let salience = position_salience(state.model, &state.current);
        let grads = state.model.input_gradient(&state.current);
        let mut order: Vec<usize> = (0..state.current.token_count())
            .filter(|p| !edited_positions.contains(p))
            .collect();
        order.sort_by(|&a, &b| salience[b].total_cmp(&salience[a]).then(a.cmp(&b)));

        let mut applied = false;
        for &pos in &order {
            let original_word = state.current.tokens()[pos].surface.clone();
            // score every real vocabulary word by the first-order estimate
            let mut scored: Vec<(f64, usize)> = (1..state.model.vocab_size())
                .filter(|&id| state.model.vocab[id] != original_word)
                .map(|id| {
                    let est = estimate_from_grads(
                        state.model,
                        &grads,
                        &state.current,
                        pos,
                        &state.model.vocab[id],
                    );
                    (est, id)
                })
                .collect();
            if scored.is_empty() {
                continue;
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let top: Vec<usize> = scored
                .into_iter()
                .take(EXACT_RESCORE_TOP)
                .map(|(_, id)| id)
                .collect();
            if !state.budget.charge(top.len()) {
                return state.finish(AttackMethod::Fd, embedder, text);
            }
            let base_loss = state.current_loss();
            let mut best: Option<(f64, Perturbation)> = None;
            for id in top {
                let p = Perturbation::word_substitute(pos, state.model.vocab[id].clone());
                let (loss, _) = exact_loss_after(&state, &p)?;
                let delta = loss - base_loss;
                if best.as_ref().map_or(true, |(d, _)| delta > *d) {
                    best = Some((delta, p));
                }
            }
            if let Some((_, p)) = best {
                state.apply(p)?;
                edited_positions.push(pos);
                applied = true;
                break;
            }
        }
        if !applied {
            break;
        }
        if !state.budget.charge(1) {
            break;
        }
    }
    state.finish(AttackMethod::Fd, embedder, text)
}
