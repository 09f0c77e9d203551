//! Character-level gradient attack: rank positions by salience, enumerate
//! single-char edits inside the top token, score with the first-order
//! estimate, exactly re-score the best few, apply the winner, repeat until
//! the substitute flips or the edit budget runs out.

use super::{
    estimate_from_grads, exact_loss_after, position_salience, AdversarialCandidate,
    AttackConstraints, AttackMethod, AttackState,
};
use crate::error::Result;
use crate::represent::Embedder;
use crate::substitute::SubstituteModel;
use crate::text::{Perturbation, Text};

const EXACT_RESCORE_TOP: usize = 5;

fn char_edits(surface: &str, pos: usize) -> Vec<(Perturbation, String)> {
    let chars: Vec<char> = surface.chars().collect();
    let len = chars.len();
    let mut out = Vec::new();
    // substitutions
    for offset in 0..len {
        for c in 'a'..='z' {
            if chars[offset] == c {
                continue;
            }
            let mut s = chars.clone();
            s[offset] = c;
            out.push((
                Perturbation::char_substitute(pos, offset, c),
                s.into_iter().collect(),
            ));
        }
    }
    // deletions (not allowed to empty the token's text entirely; the
    // perturbation layer handles token elimination)
    if len > 1 {
        for offset in 0..len {
            let s: String = chars
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != offset)
                .map(|(_, c)| c)
                .collect();
            out.push((Perturbation::char_delete(pos, offset), s));
        }
    }
    // adjacent swaps
    for offset in 0..len.saturating_sub(1) {
        if chars[offset] == chars[offset + 1] {
            continue;
        }
        let mut s = chars.clone();
        s.swap(offset, offset + 1);
        out.push((
            Perturbation::char_swap_adjacent(pos, offset),
            s.into_iter().collect(),
        ));
    }
    out
}

pub fn hotflip_attack(
    model: &SubstituteModel,
    embedder: &dyn Embedder,
    text: &Text,
    constraints: &AttackConstraints,
) -> Result<Option<AdversarialCandidate>> {
    constraints.validate()?;
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
            let surface = state.current.tokens()[pos].surface.clone();
            let mut scored: Vec<(f64, Perturbation)> = char_edits(&surface, pos)
                .into_iter()
                .map(|(p, new_surface)| {
                    let est = estimate_from_grads(state.model, &grads, &state.current, pos, &new_surface);
                    (est, p)
                })
                .collect();
            if scored.is_empty() {
                continue;
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let top = scored.into_iter().take(EXACT_RESCORE_TOP).collect::<Vec<_>>();
            if !state.budget.charge(top.len()) {
                return state.finish(AttackMethod::Hotflip, embedder, text);
            }
            let base_loss = state.current_loss();
            let mut best: Option<(f64, Perturbation)> = None;
            for (_, p) in top {
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
    state.finish(AttackMethod::Hotflip, embedder, text)
}
