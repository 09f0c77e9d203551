//! Deep-level substitute classifier: embedding bag -> dense(tanh) ->
//! dense(sigmoid), trained with squared error on the sigmoid output.
//!
//! The attack methods need only probabilities and input gradients, so the
//! model stays small and fully inspectable. Training is bit-reproducible
//! given (dataset, config, seed).

use crate::error::{CemaError, Result};
use crate::text::Text;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const OOV_TOKEN: &str = "<oov>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 6e-3,
            batch_size: 64,
            epochs: 5,
            dropout: 0.4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            embed_dim: 64,
            hidden_dim: 128,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(CemaError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CemaError::Config("dropout must be in [0,1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(CemaError::Config("sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Serialization container version.
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstituteModel {
    pub format_version: u32,
    /// Token id 0 is the out-of-vocabulary row.
    pub vocab: Vec<String>,
    vocab_index: BTreeMap<String, usize>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// |vocab| x embed_dim, row-major.
    embedding: Vec<f64>,
    /// hidden_dim x embed_dim, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    pub final_train_mse: f64,
    pub config_digest: String,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Forward {
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    proba: f64,
}

impl SubstituteModel {
    pub fn token_id(&self, surface: &str) -> usize {
        self.vocab_index.get(surface).copied().unwrap_or(0)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn embedding_row(&self, id: usize) -> &[f64] {
        &self.embedding[id * self.embed_dim..(id + 1) * self.embed_dim]
    }

    fn token_ids(&self, text: &Text) -> Vec<usize> {
        text.tokens()
            .iter()
            .map(|t| self.token_id(&t.surface))
            .collect()
    }

    fn forward_ids(&self, ids: &[usize]) -> Forward {
        let e = self.embed_dim;
        let h = self.hidden_dim;
        let mut pooled = vec![0.0f64; e];
        for &id in ids {
            let row = self.embedding_row(id);
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
        let mut hidden = vec![0.0f64; h];
        for i in 0..h {
            let mut acc = self.b1[i];
            let row = &self.w1[i * e..(i + 1) * e];
            for (w, x) in row.iter().zip(&pooled) {
                acc += w * x;
            }
            hidden[i] = acc.tanh();
        }
        let z = self.b2
            + self
                .w2
                .iter()
                .zip(&hidden)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        Forward {
            pooled,
            hidden,
            proba: sigmoid(z),
        }
    }

    /// Probability that the text carries deep-level label 1.
    pub fn predict_proba(&self, text: &Text) -> f64 {
        self.forward_ids(&self.token_ids(text)).proba
    }

    pub fn predict_label(&self, text: &Text) -> u8 {
        if self.predict_proba(text) >= 0.5 {
            1
        } else {
            0
        }
    }

    /// Squared-error loss of the forward pass against a target label.
    pub fn loss_vs_label(&self, text: &Text, label: f64) -> f64 {
        let p = self.predict_proba(text);
        (label - p) * (label - p)
    }

    /// Gradient of the flip loss (squared error against the model's own
    /// predicted label) w.r.t. each token position's embedding row. Duplicate
    /// tokens get per-position gradients, not a summed one.
    pub fn input_gradient(&self, text: &Text) -> Vec<Vec<f64>> {
        let ids = self.token_ids(text);
        let fwd = self.forward_ids(&ids);
        let label = if fwd.proba >= 0.5 { 1.0 } else { 0.0 };
        let e = self.embed_dim;
        let h = self.hidden_dim;
        // dL/dz for L = (label - p)^2
        let delta_z = -2.0 * (label - fwd.proba) * fwd.proba * (1.0 - fwd.proba);
        // dL/dx = W1^T (delta_z * w2 ⊙ (1 - hidden^2))
        let mut dx = vec![0.0f64; e];
        for i in 0..h {
            let delta_pre = delta_z * self.w2[i] * (1.0 - fwd.hidden[i] * fwd.hidden[i]);
            let row = &self.w1[i * e..(i + 1) * e];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += delta_pre * w;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        let per_pos: Vec<f64> = dx.iter().map(|v| v * inv).collect();
        ids.iter().map(|_| per_pos.clone()).collect()
    }

    /// First-order Taylor estimate of the flip-loss change when the token at
    /// `token_index` is replaced by `replacement` (OOV replacements use the
    /// OOV embedding row).
    pub fn loss_delta_estimate(
        &self,
        text: &Text,
        token_index: usize,
        replacement: &str,
    ) -> Result<f64> {
        if token_index >= text.token_count() {
            return Err(CemaError::InvalidEdit(format!(
                "token index {token_index} out of range"
            )));
        }
        let grads = self.input_gradient(text);
        let orig_id = self.token_id(&text.tokens()[token_index].surface);
        let repl_id = self.token_id(replacement);
        let orig = self.embedding_row(orig_id);
        let repl = self.embedding_row(repl_id);
        Ok(grads[token_index]
            .iter()
            .zip(repl.iter().zip(orig))
            .map(|(g, (r, o))| g * (r - o))
            .sum())
    }

    /// Flip loss after nudging one embedding coordinate of one token
    /// position; the finite-difference counterpart of [`input_gradient`].
    pub fn loss_with_embedding_nudge(
        &self,
        text: &Text,
        // mean pooling makes the probe position-invariant; the parameter
        // stays so callers read naturally as "nudge this token"
        _token_index: usize,
        coord: usize,
        delta: f64,
    ) -> f64 {
        let ids = self.token_ids(text);
        let base = self.forward_ids(&ids);
        let label = if base.proba >= 0.5 { 1.0 } else { 0.0 };
        let mut pooled = base.pooled.clone();
        pooled[coord] += delta / ids.len() as f64;
        let e = self.embed_dim;
        let h = self.hidden_dim;
        let mut hidden = vec![0.0f64; h];
        for i in 0..h {
            let mut acc = self.b1[i];
            let row = &self.w1[i * e..(i + 1) * e];
            for (w, x) in row.iter().zip(&pooled) {
                acc += w * x;
            }
            hidden[i] = acc.tanh();
        }
        let z = self.b2
            + self
                .w2
                .iter()
                .zip(&hidden)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        let p = sigmoid(z);
        (label - p) * (label - p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: SubstituteModel = serde_json::from_str(json)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(CemaError::Config(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        cfg: &TrainingConfig,
        t: i32,
        decay: bool,
    ) {
        let eps = 1e-8;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grads[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let mut update = cfg.lr * mhat / (vhat.sqrt() + eps);
            if decay {
                update += cfg.lr * cfg.weight_decay * params[i];
            }
            params[i] -= update;
        }
    }
}

/// Train the substitute on (auxiliary text, cluster label) pairs.
pub fn train(dataset: &[(Text, u8)], cfg: &TrainingConfig) -> Result<SubstituteModel> {
    if dataset.len() < 10 {
        return Err(CemaError::InvalidDataset(format!(
            "need at least 10 examples, got {}",
            dataset.len()
        )));
    }
    train_any_size(dataset, cfg)
}

/// Training without the dataset-size floor: ensemble members legally train
/// on floor(0.8 * 10) = 8 pairs when the full set is at the minimum.
pub(crate) fn train_any_size(
    dataset: &[(Text, u8)],
    cfg: &TrainingConfig,
) -> Result<SubstituteModel> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CemaError::InvalidDataset("empty dataset".into()));
    }
    let has0 = dataset.iter().any(|(_, l)| *l == 0);
    let has1 = dataset.iter().any(|(_, l)| *l == 1);
    if !has0 || !has1 {
        return Err(CemaError::InvalidDataset(
            "both labels must be present".into(),
        ));
    }

    // vocabulary from auxiliary texts only; id 0 reserved for OOV
    let mut words: Vec<String> = dataset
        .iter()
        .flat_map(|(t, _)| t.tokens().iter().map(|tok| tok.surface.clone()))
        .filter(|w| w != OOV_TOKEN)
        .collect();
    words.sort();
    words.dedup();
    let mut vocab = Vec::with_capacity(words.len() + 1);
    vocab.push(OOV_TOKEN.to_string());
    vocab.extend(words);
    let vocab_index: BTreeMap<String, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();

    let e = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let v = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut embedding: Vec<f64> = (0..v * e).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let scale = 1.0 / (e as f64).sqrt();
    let mut w1: Vec<f64> = (0..h * e).map(|_| rng.gen_range(-scale..scale)).collect();
    let mut b1 = vec![0.0f64; h];
    // zero-initialized output layer so an untrained model predicts 0.5 exactly
    let mut w2 = vec![0.0f64; h];
    let mut b2 = vec![0.0f64; 1];

    let ids_per_example: Vec<Vec<usize>> = dataset
        .iter()
        .map(|(t, _)| {
            t.tokens()
                .iter()
                .map(|tok| vocab_index.get(&tok.surface).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    let labels: Vec<f64> = dataset.iter().map(|(_, l)| *l as f64).collect();

    let mut st_emb = AdamState::new(v * e);
    let mut st_w1 = AdamState::new(h * e);
    let mut st_b1 = AdamState::new(h);
    let mut st_w2 = AdamState::new(h);
    let mut st_b2 = AdamState::new(1);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut t_step = 0i32;
    let keep = 1.0 - cfg.dropout;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut g_emb = vec![0.0f64; v * e];
            let mut g_w1 = vec![0.0f64; h * e];
            let mut g_b1 = vec![0.0f64; h];
            let mut g_w2 = vec![0.0f64; h];
            let mut g_b2 = 0.0f64;
            let inv_batch = 1.0 / batch.len() as f64;

            for &idx in batch {
                let ids = &ids_per_example[idx];
                let y = labels[idx];
                // forward with inverted dropout on the hidden layer
                let mut pooled = vec![0.0f64; e];
                for &id in ids {
                    let row = &embedding[id * e..(id + 1) * e];
                    for (p, val) in pooled.iter_mut().zip(row) {
                        *p += val;
                    }
                }
                let inv_len = 1.0 / ids.len() as f64;
                for p in pooled.iter_mut() {
                    *p *= inv_len;
                }
                let mut hidden = vec![0.0f64; h];
                let mut mask = vec![0.0f64; h];
                for i in 0..h {
                    let mut acc = b1[i];
                    let row = &w1[i * e..(i + 1) * e];
                    for (wv, x) in row.iter().zip(&pooled) {
                        acc += wv * x;
                    }
                    hidden[i] = acc.tanh();
                    mask[i] = if cfg.dropout > 0.0 {
                        if rng.gen::<f64>() < cfg.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    } else {
                        1.0
                    };
                }
                let z = b2[0]
                    + w2.iter()
                        .zip(hidden.iter().zip(&mask))
                        .map(|(wv, (x, m))| wv * x * m)
                        .sum::<f64>();
                let p = sigmoid(z);

                let delta_z = -2.0 * (y - p) * p * (1.0 - p) * inv_batch;
                g_b2 += delta_z;
                let mut dx = vec![0.0f64; e];
                for i in 0..h {
                    g_w2[i] += delta_z * hidden[i] * mask[i];
                    let delta_pre =
                        delta_z * w2[i] * mask[i] * (1.0 - hidden[i] * hidden[i]);
                    g_b1[i] += delta_pre;
                    let w1_row = &w1[i * e..(i + 1) * e];
                    let g_row = &mut g_w1[i * e..(i + 1) * e];
                    for j in 0..e {
                        g_row[j] += delta_pre * pooled[j];
                        dx[j] += delta_pre * w1_row[j];
                    }
                }
                for &id in ids {
                    let g_row = &mut g_emb[id * e..(id + 1) * e];
                    for (g, d) in g_row.iter_mut().zip(&dx) {
                        *g += d * inv_len;
                    }
                }
            }

            t_step += 1;
            st_emb.step(&mut embedding, &g_emb, cfg, t_step, true);
            st_w1.step(&mut w1, &g_w1, cfg, t_step, true);
            st_b1.step(&mut b1, &g_b1, cfg, t_step, false);
            st_w2.step(&mut w2, &g_w2, cfg, t_step, true);
            st_b2.step(&mut b2, &[g_b2], cfg, t_step, false);
        }
    }

    let mut model = SubstituteModel {
        format_version: MODEL_FORMAT_VERSION,
        vocab,
        vocab_index,
        embed_dim: e,
        hidden_dim: h,
        embedding,
        w1,
        b1,
        w2,
        b2: b2[0],
        final_train_mse: 0.0,
        config_digest: cfg.digest(),
    };
    let mse: f64 = ids_per_example
        .iter()
        .zip(&labels)
        .map(|(ids, &y)| {
            let p = model.forward_ids(ids).proba;
            (y - p) * (y - p)
        })
        .sum::<f64>()
        / dataset.len() as f64;
    model.final_train_mse = mse;
    Ok(model)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::text::normalize_and_tokenize;

    /// Linearly separable corpus: label 1 iff the marker token "zebra"
    /// appears.
    pub fn separable_corpus(n: usize, seed: u64) -> Vec<(Text, u8)> {
        let fillers = [
            "river", "stone", "cloud", "amber", "field", "quiet", "spark", "olive",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let mut words: Vec<&str> = (0..6)
                    .map(|_| fillers[rng.gen_range(0..fillers.len())])
                    .collect();
                if label == 1 {
                    let pos = rng.gen_range(0..=words.len());
                    words.insert(pos, "zebra");
                }
                (
                    normalize_and_tokenize(&words.join(" ")).unwrap(),
                    label,
                )
            })
            .collect()
    }
}
