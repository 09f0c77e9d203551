//! White-box attack methods applied to the substitute model, plus
//! similarity-constrained candidate generation.
//!
//! Attacks never see a victim handle: they receive only the substitute
//! model, so candidate generation costs zero victim queries by construction.

mod fd;
mod hotflip;
mod textbugger;

pub use fd::fd_attack;
pub use hotflip::hotflip_attack;
pub use textbugger::{textbugger_attack, ConfusableTable};

use crate::error::{CemaError, Result};
use crate::represent::Embedder;
use crate::substitute::SubstituteModel;
use crate::text::{apply_perturbation, Perturbation, Text};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConstraints {
    /// Minimum cosine similarity a candidate must keep to the original.
    pub epsilon: f64,
    /// Fraction of tokens an attack may modify.
    pub max_edit_ratio: f64,
    /// Per-text cap on substitute forward passes.
    pub max_substitute_evals: usize,
}

impl Default for AttackConstraints {
    fn default() -> Self {
        Self {
            epsilon: 0.8,
            max_edit_ratio: 0.25,
            max_substitute_evals: 2000,
        }
    }
}

impl AttackConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(CemaError::Config("epsilon must be in (0,1]".into()));
        }
        if !(self.max_edit_ratio > 0.0 && self.max_edit_ratio <= 1.0) {
            return Err(CemaError::Config("max_edit_ratio must be in (0,1]".into()));
        }
        Ok(())
    }

    pub fn max_edits(&self, token_count: usize) -> usize {
        (self.max_edit_ratio * token_count as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Hotflip,
    Fd,
    TextBugger,
}

impl AttackMethod {
    pub fn id(&self) -> &'static str {
        match self {
            AttackMethod::Hotflip => "hotflip",
            AttackMethod::Fd => "fd",
            AttackMethod::TextBugger => "textbugger",
        }
    }

    /// Deterministic tie-break ordering across methods.
    pub fn ordinal(&self) -> usize {
        match self {
            AttackMethod::Hotflip => 0,
            AttackMethod::Fd => 1,
            AttackMethod::TextBugger => 2,
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A perturbed text that flipped the primary substitute, with the edit
/// trail needed to replay it from the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialCandidate {
    pub text: Text,
    pub method_id: AttackMethod,
    pub similarity: f64,
    pub flipped_primary: bool,
    pub edits: Vec<Perturbation>,
}

impl AdversarialCandidate {
    /// Replays the edit list against the original, which must reproduce the
    /// candidate text byte-exactly.
    pub fn replay(&self, original: &Text) -> Result<Text> {
        let mut cur = original.clone();
        for p in &self.edits {
            cur = apply_perturbation(&cur, p)?;
        }
        Ok(cur)
    }
}

/// Counts substitute forward passes during one attack invocation.
pub(crate) struct EvalBudget {
    used: usize,
    cap: usize,
}

impl EvalBudget {
    pub fn new(cap: usize) -> Self {
        Self { used: 0, cap }
    }

    /// Charge `n` forward passes; false when the budget is exhausted.
    pub fn charge(&mut self, n: usize) -> bool {
        if self.used + n > self.cap {
            return false;
        }
        self.used += n;
        true
    }
}

/// Gradient-based position salience: first-order loss change from removing
/// the token's embedding contribution. Mean pooling makes the raw
/// per-position gradient rows identical, so salience projects the gradient
/// onto each token's own embedding instead.
pub(crate) fn position_salience(model: &SubstituteModel, text: &Text) -> Vec<f64> {
    let grads = model.input_gradient(text);
    text.tokens()
        .iter()
        .zip(&grads)
        .map(|(tok, g)| {
            let row = model.embedding_row(model.token_id(&tok.surface));
            g.iter().zip(row).map(|(a, b)| a * b).sum::<f64>().abs()
        })
        .collect()
}

/// First-order estimate of the flip-loss change for replacing the token at
/// `pos` with `replacement`, reusing precomputed gradients.
pub(crate) fn estimate_from_grads(
    model: &SubstituteModel,
    grads: &[Vec<f64>],
    text: &Text,
    pos: usize,
    replacement: &str,
) -> f64 {
    let orig = model.embedding_row(model.token_id(&text.tokens()[pos].surface));
    let repl = model.embedding_row(model.token_id(replacement));
    grads[pos]
        .iter()
        .zip(repl.iter().zip(orig))
        .map(|(g, (r, o))| g * (r - o))
        .sum()
}

/// Shared mutable state for the greedy attack loops.
pub(crate) struct AttackState<'a> {
    pub model: &'a SubstituteModel,
    pub original_label: u8,
    pub current: Text,
    pub edits: Vec<Perturbation>,
    pub max_edits: usize,
    pub budget: EvalBudget,
}

impl<'a> AttackState<'a> {
    pub fn new(model: &'a SubstituteModel, text: &Text, constraints: &AttackConstraints) -> Self {
        Self {
            model,
            original_label: model.predict_label(text),
            current: text.clone(),
            edits: Vec::new(),
            max_edits: constraints.max_edits(text.token_count()),
            budget: EvalBudget::new(constraints.max_substitute_evals),
        }
    }

    /// Loss of the current text against the original label (the quantity all
    /// three methods maximize).
    pub fn current_loss(&self) -> f64 {
        self.model
            .loss_vs_label(&self.current, self.original_label as f64)
    }

    pub fn flipped(&self) -> bool {
        self.model.predict_label(&self.current) != self.original_label
    }

    pub fn apply(&mut self, p: Perturbation) -> Result<()> {
        self.current = apply_perturbation(&self.current, &p)?;
        self.edits.push(p);
        Ok(())
    }

    pub fn finish(
        self,
        method: AttackMethod,
        embedder: &dyn Embedder,
        original: &Text,
    ) -> Result<Option<AdversarialCandidate>> {
        if !self.flipped() {
            return Ok(None);
        }
        let similarity = embedder.similarity(original, &self.current)?;
        Ok(Some(AdversarialCandidate {
            text: self.current,
            method_id: method,
            similarity,
            flipped_primary: true,
            edits: self.edits,
        }))
    }
}

/// Exactly re-score a proposed perturbation: loss change against the
/// original label, plus the resulting text. One forward pass.
pub(crate) fn exact_loss_after(
    state: &AttackState<'_>,
    p: &Perturbation,
) -> Result<(f64, Text)> {
    let edited = apply_perturbation(&state.current, p)?;
    let loss = state
        .model
        .loss_vs_label(&edited, state.original_label as f64);
    Ok((loss, edited))
}

/// Run each configured method independently from the original text and keep
/// candidates that flipped the primary substitute and stayed within the
/// similarity threshold.
pub fn generate_candidates(
    methods: &[AttackMethod],
    model: &SubstituteModel,
    embedder: &dyn Embedder,
    victim_text: &Text,
    constraints: &AttackConstraints,
    confusables: &ConfusableTable,
) -> Result<Vec<AdversarialCandidate>> {
    constraints.validate()?;
    let mut candidates = Vec::new();
    for method in methods {
        let produced = match method {
            AttackMethod::Hotflip => hotflip_attack(model, embedder, victim_text, constraints)?,
            AttackMethod::Fd => fd_attack(model, embedder, victim_text, constraints)?,
            AttackMethod::TextBugger => {
                textbugger_attack(model, embedder, victim_text, constraints, confusables)?
            }
        };
        if let Some(c) = produced {
            if c.flipped_primary && c.similarity >= constraints.epsilon {
                candidates.push(c);
            }
        }
    }
    Ok(candidates)
}
