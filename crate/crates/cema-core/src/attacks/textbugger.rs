//! Char+word bug generation: rank words by the probability drop their
//! deletion causes, then try five bug types per word and keep the one that
//! raises the substitute's loss the most.

use super::{exact_loss_after, AdversarialCandidate, AttackConstraints, AttackMethod, AttackState};
use crate::error::{CemaError, Result};
use crate::represent::Embedder;
use crate::substitute::SubstituteModel;
use crate::text::{Perturbation, Text};
use std::collections::BTreeMap;
use std::path::Path;

/// Visual-confusable substitution pairs, loaded from a UTF-8 TSV of
/// `from<TAB>to` rows.
#[derive(Debug, Clone)]
pub struct ConfusableTable {
    map: BTreeMap<char, char>,
}

impl ConfusableTable {
    /// Table shipped with the crate (latin/digit/diacritic pairs).
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/confusables.tsv")).expect("builtin table parses")
    }

    pub fn parse(tsv: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in tsv.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let from = parts
                .next()
                .and_then(|s| s.chars().next())
                .ok_or_else(|| {
                    CemaError::Config(format!("confusables line {} missing source", lineno + 1))
                })?;
            let to = parts.next().and_then(|s| s.chars().next()).ok_or_else(|| {
                CemaError::Config(format!("confusables line {} missing target", lineno + 1))
            })?;
            map.insert(from, to);
        }
        if map.is_empty() {
            return Err(CemaError::Config("confusables table is empty".into()));
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn lookup(&self, c: char) -> Option<char> {
        self.map.get(&c).copied()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Nearest real vocabulary word by cosine over the substitute's embedding
/// table, excluding the word itself and the OOV row.
fn nearest_vocab_word(model: &SubstituteModel, word: &str) -> Option<String> {
    let word_id = model.token_id(word);
    let word_row = model.embedding_row(word_id).to_vec();
    let mut best: Option<(f64, usize)> = None;
    for id in 1..model.vocab_size() {
        if model.vocab[id] == word {
            continue;
        }
        let sim = cosine(&word_row, model.embedding_row(id));
        if best.map_or(true, |(s, bid)| sim > s || (sim == s && id < bid)) {
            best = Some((sim, id));
        }
    }
    best.map(|(_, id)| model.vocab[id].clone())
}

/// The five TextBugger bug types for one token, in tie-break ordinal order.
/// Tokens without enough interior characters skip the char-level bugs.
fn bugs_for_token(
    model: &SubstituteModel,
    text: &Text,
    pos: usize,
    confusables: &ConfusableTable,
) -> Vec<Perturbation> {
    let surface: Vec<char> = text.tokens()[pos].surface.chars().collect();
    let len = surface.len();
    let mut bugs = Vec::with_capacity(5);
    // 1. insert a space inside the word
    if len >= 2 {
        bugs.push(Perturbation::char_insert(pos, len / 2, ' '));
    }
    // 2. delete a middle character
    if len >= 3 {
        bugs.push(Perturbation::char_delete(pos, len / 2));
    }
    // 3. swap adjacent middle characters
    if len >= 4 {
        let offset = len / 2 - 1;
        if surface[offset] != surface[offset + 1] {
            bugs.push(Perturbation::char_swap_adjacent(pos, offset));
        }
    }
    // 4. substitute a char with a visual confusable
    if let Some((offset, to)) = surface
        .iter()
        .enumerate()
        .find_map(|(i, &c)| confusables.lookup(c).map(|to| (i, to)))
    {
        bugs.push(Perturbation::char_substitute(pos, offset, to));
    }
    // 5. substitute with the nearest word in the embedding table
    if let Some(word) = nearest_vocab_word(model, &text.tokens()[pos].surface) {
        bugs.push(Perturbation::word_substitute(pos, word));
    }
    bugs
}

pub fn textbugger_attack(
    model: &SubstituteModel,
    embedder: &dyn Embedder,
    text: &Text,
    constraints: &AttackConstraints,
    confusables: &ConfusableTable,
) -> Result<Option<AdversarialCandidate>> {
    constraints.validate()?;
    let mut state = AttackState::new(model, text, constraints);
    let label = state.original_label as f64;

    // word importance: predicted-label probability drop under deletion
    let n = text.token_count();
    if !state.budget.charge(1 + if n > 1 { n } else { 0 }) {
        return Ok(None);
    }
    let p_label = |t: &Text| {
        let p = model.predict_proba(t);
        if label == 1.0 {
            p
        } else {
            1.0 - p
        }
    };
    let base_p = p_label(text);
    let mut importance: Vec<(usize, f64)> = (0..n)
        .map(|pos| {
            if n == 1 {
                return (pos, 0.0);
            }
            let words: Vec<String> = text
                .tokens()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != pos)
                .map(|(_, t)| t.surface.clone())
                .collect();
            let without = crate::text::normalize_and_tokenize(&words.join(" "))
                .expect("n > 1 leaves at least one token");
            (pos, base_p - p_label(&without))
        })
        .collect();
    importance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    for (pos, _) in importance {
        if state.edits.len() >= state.max_edits || state.flipped() {
            break;
        }
        let bugs = bugs_for_token(model, &state.current, pos, confusables);
        if bugs.is_empty() {
            continue;
        }
        if !state.budget.charge(bugs.len() + 1) {
            break;
        }
        let base_loss = state.current_loss();
        // best = (loss delta, similarity, bug ordinal)
        let mut best: Option<(f64, f64, usize, Perturbation)> = None;
        for (ordinal, bug) in bugs.into_iter().enumerate() {
            let (loss, edited) = match exact_loss_after(&state, &bug) {
                Ok(v) => v,
                Err(CemaError::InvalidEdit(_)) => continue,
                Err(e) => return Err(e),
            };
            let delta = loss - base_loss;
            let sim = embedder.similarity(text, &edited)?;
            let better = match &best {
                None => true,
                Some((d, s, o, _)) => {
                    delta > *d
                        || (delta == *d && (sim > *s || (sim == *s && ordinal < *o)))
                }
            };
            if better {
                best = Some((delta, sim, ordinal, bug));
            }
        }
        if let Some((delta, _, _, bug)) = best {
            if delta > 0.0 {
                state.apply(bug)?;
            }
        }
    }
    if !state.budget.charge(1) {
        return Ok(None);
    }
    state.finish(AttackMethod::TextBugger, embedder, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::represent::HashedNgramEmbedder;
    use crate::substitute::{fixtures::separable_corpus, train, TrainingConfig};
    use crate::text::normalize_and_tokenize;

    fn fixture() -> (SubstituteModel, HashedNgramEmbedder) {
        (
            train(
            &separable_corpus(100, 5),
            &TrainingConfig {
                epochs: 300,
                ..TrainingConfig::default()
            },
        ).unwrap(),
            HashedNgramEmbedder::new(256).unwrap(),
        )
    }

    #[test]
    fn fixture_flips_or_returns_noflip_within_budget() {
        let (model, embedder) = fixture();
        let c = AttackConstraints::default();
        let t = normalize_and_tokenize("zebra river stone cloud amber field quiet spark").unwrap();
        if let Some(cand) =
            textbugger_attack(&model, &embedder, &t, &c, &ConfusableTable::builtin()).unwrap()
        {
            assert!(cand.flipped_primary);
            assert!(cand.edits.len() <= c.max_edits(t.token_count()));
        }
    }

    #[test]
    fn single_char_tokens_skip_char_bugs() {
        let (model, _) = fixture();
        let t = normalize_and_tokenize("a river").unwrap();
        let bugs = bugs_for_token(&model, &t, 0, &ConfusableTable::builtin());
        // only the confusable (a -> @) and nearest-word bugs survive
        assert!(bugs
            .iter()
            .all(|b| matches!(
                b.kind,
                crate::text::PerturbationKind::WordSubstitute
                    | crate::text::PerturbationKind::CharSubstitute
            )));
    }

    #[test]
    fn deletion_importance_ranking_is_monotone() {
        let (model, _) = fixture();
        let t = normalize_and_tokenize("zebra river stone").unwrap();
        let p = model.predict_proba(&t);
        let without_marker = normalize_and_tokenize("river stone").unwrap();
        let without_filler = normalize_and_tokenize("zebra stone").unwrap();
        let drop_marker = p - model.predict_proba(&without_marker);
        let drop_filler = p - model.predict_proba(&without_filler);
        assert!(drop_marker >= drop_filler);
    }

    #[test]
    fn confusable_table_parse_and_lookup() {
        let table = ConfusableTable::parse("o\t0\nl\t1\n").unwrap();
        assert_eq!(table.lookup('o'), Some('0'));
        assert_eq!(table.lookup('x'), None);
        assert!(ConfusableTable::parse("").is_err());
    }
}
