//! Joint representation of an input text and its task outputs.
//!
//! Every segment of a joint vector comes from the same embedder
//! configuration; segment 0 is the input text, segments 1..N follow the
//! victim's declared task order.

use crate::error::{CemaError, Result};
use crate::text::{cosine_similarity, lexical_embed, normalize_and_tokenize, EmbeddingVector, Text};
use crate::victim::VictimResponse;
use std::collections::HashMap;
use std::sync::Mutex;

/// Fixed-dimension text embedder. Implementations must be deterministic per
/// (configuration, text).
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_raw(&self, raw: &str) -> Result<EmbeddingVector>;

    fn embed(&self, text: &Text) -> Result<EmbeddingVector> {
        self.embed_raw(text.raw())
    }

    /// Cosine similarity between two texts under this embedder.
    fn similarity(&self, a: &Text, b: &Text) -> Result<f64> {
        cosine_similarity(&self.embed(a)?, &self.embed(b)?)
    }
}

/// Default backend: hashed character-3-gram TF with L2 normalization
/// (see [`lexical_embed`]).
pub struct HashedNgramEmbedder {
    dim: usize,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 64 {
            return Err(CemaError::Config(format!(
                "hashed n-gram dim must be >= 64, got {dim}"
            )));
        }
        Ok(Self { dim })
    }
}

impl Embedder for HashedNgramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, raw: &str) -> Result<EmbeddingVector> {
        let text = normalize_and_tokenize(raw)?;
        lexical_embed(&text, self.dim)
    }
}

/// One-hot bag-of-words over a fixed vocabulary, L2-normalized. Tokens
/// outside the vocabulary are ignored.
pub struct OneHotEmbedder {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

impl OneHotEmbedder {
    pub fn new(mut vocab: Vec<String>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(CemaError::Config("one-hot vocabulary is empty".into()));
        }
        vocab.sort();
        vocab.dedup();
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Self { vocab, index })
    }

    /// Build the vocabulary from a corpus of texts.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a Text>) -> Result<Self> {
        let mut vocab: Vec<String> = texts
            .into_iter()
            .flat_map(|t| t.tokens().iter().map(|tok| tok.surface.clone()))
            .collect();
        vocab.sort();
        vocab.dedup();
        Self::new(vocab)
    }
}

impl Embedder for OneHotEmbedder {
    fn dim(&self) -> usize {
        self.vocab.len()
    }

    fn embed_raw(&self, raw: &str) -> Result<EmbeddingVector> {
        let text = normalize_and_tokenize(raw)?;
        let mut values = vec![0.0f64; self.vocab.len()];
        for tok in text.tokens() {
            if let Some(&i) = self.index.get(&tok.surface) {
                values[i] += 1.0;
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Ok(EmbeddingVector { values })
    }
}

/// Per-run memoization keyed by normalized raw text; auxiliary texts are
/// embedded once for clustering and repeatedly for similarity scoring.
pub struct CachingEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> CachingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn cached_count(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<E: Embedder> Embedder for CachingEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_raw(&self, raw: &str) -> Result<EmbeddingVector> {
        let key = normalize_and_tokenize(raw)?.raw().to_string();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed_raw(&key)?;
        self.cache.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}

#[derive(serde::Deserialize)]
struct WireEmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// HTTP adapter for a remote encoder speaking
/// POST `{"texts":[...]}` -> `{"vectors":[[...]],"dim":n}`.
/// Results are cached per text; the declared dimension must not drift.
pub struct RemoteEmbedder {
    endpoint_url: String,
    agent: ureq::Agent,
    dim: usize,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl RemoteEmbedder {
    /// Connects and probes the endpoint once to learn its dimension.
    pub fn connect(endpoint_url: impl Into<String>) -> Result<Self> {
        let endpoint_url = endpoint_url.into();
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(30))
            .build();
        let resp: WireEmbedResponse = agent
            .post(&endpoint_url)
            .send_json(serde_json::json!({ "texts": ["probe"] }))
            .map_err(|e| CemaError::EmbedderUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| CemaError::Protocol(format!("bad embed response: {e}")))?;
        if resp.vectors.len() != 1 || resp.vectors[0].len() != resp.dim {
            return Err(CemaError::Protocol(
                "embed probe returned inconsistent vector length".into(),
            ));
        }
        Ok(Self {
            endpoint_url,
            agent,
            dim: resp.dim,
            cache: Mutex::new(HashMap::new()),
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, raw: &str) -> Result<EmbeddingVector> {
        let key = normalize_and_tokenize(raw)?.raw().to_string();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let resp: WireEmbedResponse = self
            .agent
            .post(&self.endpoint_url)
            .send_json(serde_json::json!({ "texts": [key] }))
            .map_err(|e| CemaError::EmbedderUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| CemaError::Protocol(format!("bad embed response: {e}")))?;
        if resp.dim != self.dim {
            return Err(CemaError::Protocol(format!(
                "embedder dim drifted from {} to {}",
                self.dim, resp.dim
            )));
        }
        let values = resp
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| CemaError::Protocol("embed response missing vector".into()))?;
        if values.len() != self.dim {
            return Err(CemaError::Protocol(format!(
                "embed vector length {} != declared dim {}",
                values.len(),
                self.dim
            )));
        }
        let v = EmbeddingVector { values };
        self.cache.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}

/// Concatenation of the input-text embedding with one embedding per task
/// output, all under one embedder configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRepresentation {
    pub vector: Vec<f64>,
    pub n_tasks: usize,
    pub segment_dim: usize,
}

impl JointRepresentation {
    pub fn segment(&self, i: usize) -> &[f64] {
        let d = self.segment_dim;
        &self.vector[i * d..(i + 1) * d]
    }
}

/// Embed the input text and every task output, concatenating into a
/// `(N+1)*d` vector.
pub fn build_joint(
    embedder: &dyn Embedder,
    text: &Text,
    response: &VictimResponse,
) -> Result<JointRepresentation> {
    if response.outputs.is_empty() {
        return Err(CemaError::InvalidInput(
            "victim response has zero task outputs".into(),
        ));
    }
    let d = embedder.dim();
    let mut vector = Vec::with_capacity((response.outputs.len() + 1) * d);
    vector.extend_from_slice(&embedder.embed(text)?.values);
    for (_, output) in &response.outputs {
        vector.extend_from_slice(&embedder.embed_raw(output)?.values);
    }
    Ok(JointRepresentation {
        vector,
        n_tasks: response.outputs.len(),
        segment_dim: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(outputs: &[(&str, &str)]) -> VictimResponse {
        VictimResponse {
            outputs: outputs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    #[test]
    fn embed_deterministic() {
        let e = HashedNgramEmbedder::new(128).unwrap();
        let t = normalize_and_tokenize("some words here").unwrap();
        assert_eq!(e.embed(&t).unwrap(), e.embed(&t).unwrap());
    }

    #[test]
    fn one_hot_counts_then_normalizes() {
        let e = OneHotEmbedder::new(vec!["a".into(), "b".into()]).unwrap();
        let v = e.embed_raw("a a b").unwrap();
        // counts [2,1] normalized
        assert!((v.values[0] - 0.894).abs() < 1e-3);
        assert!((v.values[1] - 0.447).abs() < 1e-3);
    }

    #[test]
    fn joint_length_is_tasks_plus_one_times_dim() {
        let e = HashedNgramEmbedder::new(256).unwrap();
        let t = normalize_and_tokenize("hello there").unwrap();
        let j = build_joint(&e, &t, &resp(&[("a", "x"), ("b", "y")])).unwrap();
        assert_eq!(j.vector.len(), 768);
        assert_eq!(j.n_tasks, 2);

        let e = HashedNgramEmbedder::new(128).unwrap();
        let six = resp(&[
            ("c1", "p"),
            ("c2", "q"),
            ("c3", "r"),
            ("c4", "s"),
            ("t1", "u"),
            ("t2", "v"),
        ]);
        let j = build_joint(&e, &t, &six).unwrap();
        assert_eq!(j.vector.len(), 896);
    }

    #[test]
    fn identical_outputs_differ_only_in_first_segment() {
        let e = HashedNgramEmbedder::new(128).unwrap();
        let a = normalize_and_tokenize("first input").unwrap();
        let b = normalize_and_tokenize("second input").unwrap();
        let r = resp(&[("t", "same output"), ("u", "also same")]);
        let ja = build_joint(&e, &a, &r).unwrap();
        let jb = build_joint(&e, &b, &r).unwrap();
        assert_ne!(ja.segment(0), jb.segment(0));
        assert_eq!(ja.segment(1), jb.segment(1));
        assert_eq!(ja.segment(2), jb.segment(2));
    }

    #[test]
    fn permuting_task_order_permutes_segments() {
        let e = HashedNgramEmbedder::new(128).unwrap();
        let t = normalize_and_tokenize("input text").unwrap();
        let j1 = build_joint(&e, &t, &resp(&[("a", "one"), ("b", "two")])).unwrap();
        let j2 = build_joint(&e, &t, &resp(&[("b", "two"), ("a", "one")])).unwrap();
        assert_eq!(j1.segment(1), j2.segment(2));
        assert_eq!(j1.segment(2), j2.segment(1));
    }

    #[test]
    fn empty_response_rejected() {
        let e = HashedNgramEmbedder::new(128).unwrap();
        let t = normalize_and_tokenize("x").unwrap();
        assert!(build_joint(&e, &t, &resp(&[])).is_err());
    }

    #[test]
    fn cache_dedupes_by_normalized_text() {
        let e = CachingEmbedder::new(HashedNgramEmbedder::new(128).unwrap());
        e.embed_raw("the  cat").unwrap();
        e.embed_raw("the cat").unwrap();
        assert_eq!(e.cached_count(), 1);
    }
}
