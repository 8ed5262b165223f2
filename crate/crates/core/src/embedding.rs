//! Paragraph-vector document embeddings (distributed bag of words) trained
//! with negative sampling.
//!
//! Each document owns a vector `d`; each vocabulary word owns an output row
//! `u_w`. For a word `w` of the document and `k` noise words drawn from the
//! unigram distribution raised to 3/4, the per-word loss is
//!
//! ```text
//! L = -ln σ(u_w · d) - Σ_n ln σ(-u_n · d)
//! ```
//!
//! Inference for an unseen document freezes the output rows and runs the same
//! descent on a fresh `d`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::{dot, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderParams {
    pub dim: usize,
    pub epochs: usize,
    pub negative: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub min_count: usize,
    pub infer_steps: usize,
    pub seed: u64,
}

impl Default for EmbedderParams {
    fn default() -> Self {
        EmbedderParams {
            dim: 300,
            epochs: 20,
            negative: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            min_count: 2,
            infer_steps: 50,
            seed: 0,
        }
    }
}

/// An embedded document. `no_known_tokens` is set when nothing in the text
/// was in the vocabulary, in which case `values` is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector<T> {
    pub values: Vec<T>,
    pub doc_id: Option<String>,
    pub no_known_tokens: bool,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

/// Negative-sampling loss of one (document, word) pair.
pub fn negative_sampling_loss<T: Scalar>(doc: &[T], target: &[T], negatives: &[&[T]]) -> T {
    let mut loss = -log_sigmoid(dot(target, doc));
    for n in negatives {
        loss -= log_sigmoid(-dot(n, doc));
    }
    loss
}

/// Gradient of [`negative_sampling_loss`] with respect to the document vector.
pub fn negative_sampling_doc_gradient<T: Scalar>(
    doc: &[T],
    target: &[T],
    negatives: &[&[T]],
) -> Vec<T> {
    let mut grad = vec![T::zero(); doc.len()];
    let g = sigmoid(dot(target, doc)) - T::one();
    for (gi, &u) in grad.iter_mut().zip(target) {
        *gi += g * u;
    }
    for n in negatives {
        let g = sigmoid(dot(n, doc));
        for (gi, &u) in grad.iter_mut().zip(n.iter()) {
            *gi += g * u;
        }
    }
    grad
}

/// `u·v / (|u||v|)`; 0 when either vector has zero norm.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu.is_zero() || nv.is_zero() {
        return Ok(T::zero());
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Cumulative unigram^0.75 table for drawing noise words.
#[derive(Debug, Clone, PartialEq)]
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c.max(1) as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let x = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderModel<T> {
    pub params: EmbedderParams,
    vocab: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    /// `vocab.len() × dim` output rows.
    word_weights: Vec<T>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    /// `doc_ids.len() × dim`.
    doc_vectors: Vec<T>,
    noise: Option<NoiseTable>,
    /// Mean per-word loss of every training epoch.
    pub epoch_losses: Vec<f64>,
}

struct Sgd<'a, T> {
    word_weights: &'a mut [T],
    dim: usize,
    negative: usize,
    noise: &'a NoiseTable,
    update_words: bool,
}

impl<T: Scalar> Sgd<'_, T> {
    /// One descent step on `doc` for `target`; returns the pair loss before the step.
    fn step<R: Rng>(&mut self, doc: &mut [T], target: usize, lr: T, rng: &mut R) -> f64 {
        let dim = self.dim;
        let mut neu1e = vec![T::zero(); dim];
        let mut loss = T::zero();
        for s in 0..=self.negative {
            let (word, label) = if s == 0 {
                (target, T::one())
            } else {
                let w = self.noise.sample(rng);
                if w == target {
                    continue;
                }
                (w, T::zero())
            };
            let row = &mut self.word_weights[word * dim..(word + 1) * dim];
            let f = dot(row, doc);
            loss -= if s == 0 {
                log_sigmoid(f)
            } else {
                log_sigmoid(-f)
            };
            let g = (label - sigmoid(f)) * lr;
            for (e, &u) in neu1e.iter_mut().zip(row.iter()) {
                *e += g * u;
            }
            if self.update_words {
                for (u, &d) in row.iter_mut().zip(doc.iter()) {
                    *u += g * d;
                }
            }
        }
        for (d, e) in doc.iter_mut().zip(neu1e) {
            *d += e;
        }
        loss.to_f64_exact()
    }
}

fn init_vector<T: Scalar, R: Rng>(dim: usize, rng: &mut R) -> Vec<T> {
    (0..dim)
        .map(|_| lit((rng.gen::<f64>() - 0.5) / dim as f64))
        .collect()
}

fn token_seed<S: AsRef<str>>(seed: u64, tokens: &[S]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for t in tokens {
        h.update(t.as_ref().as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn linear_lr(params: &EmbedderParams, done: usize, total: usize) -> f64 {
    let frac = if total == 0 {
        0.0
    } else {
        done as f64 / total as f64
    };
    (params.learning_rate - (params.learning_rate - params.min_learning_rate) * frac)
        .max(params.min_learning_rate)
}

fn check_params(params: &EmbedderParams) -> Result<()> {
    if params.dim == 0 {
        return Err(Error::InvalidArgument("embedding dim must be at least 1".into()));
    }
    if params.negative == 0 {
        return Err(Error::InvalidArgument("negative samples must be at least 1".into()));
    }
    Ok(())
}

/// Trains on `(doc_id, tokens)` pairs. Single-threaded and bit-reproducible for a fixed seed.
pub fn train_embedder<T, S>(docs: &[(String, Vec<S>)], params: &EmbedderParams) -> Result<EmbedderModel<T>>
where
    T: Scalar,
    S: AsRef<str>,
{
    check_params(params)?;
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for (_, toks) in docs {
        for t in toks {
            *freq.entry(t.as_ref()).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(_, c)| c as usize >= params.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<String, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), i))
        .collect();
    let counts: Vec<u64> = vocab.iter().map(|&(_, c)| c).collect();
    let vocab: Vec<String> = vocab.into_iter().map(|(w, _)| w.to_string()).collect();
    let noise = NoiseTable::new(&counts);
    let dim = params.dim;

    let encoded: Vec<Vec<usize>> = docs
        .iter()
        .map(|(_, toks)| toks.iter().filter_map(|t| index.get(t.as_ref()).copied()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut doc_vectors: Vec<T> = Vec::with_capacity(docs.len() * dim);
    for _ in docs {
        doc_vectors.extend(init_vector::<T, _>(dim, &mut rng));
    }
    let mut word_weights = vec![T::zero(); vocab.len() * dim];

    let words_per_epoch: usize = encoded.iter().map(Vec::len).sum();
    let total = words_per_epoch * params.epochs;
    let mut done = 0usize;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut sgd = Sgd {
        word_weights: &mut word_weights,
        dim,
        negative: params.negative,
        noise: &noise,
        update_words: true,
    };
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &d in &order {
            let doc = &mut doc_vectors[d * dim..(d + 1) * dim];
            for &w in &encoded[d] {
                let lr = lit(linear_lr(params, done, total));
                loss += sgd.step(doc, w, lr, &mut rng);
                done += 1;
            }
        }
        epoch_losses.push(if words_per_epoch > 0 {
            loss / words_per_epoch as f64
        } else {
            0.0
        });
    }

    let doc_ids: Vec<String> = docs.iter().map(|(id, _)| id.clone()).collect();
    let doc_index = doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    Ok(EmbedderModel {
        params: params.clone(),
        vocab,
        counts,
        index,
        word_weights,
        doc_ids,
        doc_index,
        doc_vectors,
        noise: Some(noise),
        epoch_losses,
    })
}

impl<T: Scalar> EmbedderModel<T> {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn word_row(&self, token: &str) -> Option<&[T]> {
        let dim = self.dim();
        self.index
            .get(token)
            .map(|&i| &self.word_weights[i * dim..(i + 1) * dim])
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Vector learned for a training document.
    pub fn trained_vector(&self, doc_id: &str) -> Option<&[T]> {
        let dim = self.dim();
        self.doc_index
            .get(doc_id)
            .map(|&i| &self.doc_vectors[i * dim..(i + 1) * dim])
    }

    /// Infers a vector for `tokens` with the output rows frozen. Deterministic
    /// in `(params.seed, tokens)`.
    pub fn infer_vector<S: AsRef<str>>(&self, tokens: &[S], steps: usize) -> Result<DocVector<T>> {
        if steps == 0 {
            return Err(Error::InvalidArgument("inference steps must be positive".into()));
        }
        let dim = self.dim();
        let known: Vec<usize> = tokens
            .iter()
            .filter_map(|t| self.index.get(t.as_ref()).copied())
            .collect();
        let noise = match &self.noise {
            Some(n) if !known.is_empty() => n,
            _ => {
                return Ok(DocVector {
                    values: vec![T::zero(); dim],
                    doc_id: None,
                    no_known_tokens: true,
                })
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(token_seed(self.params.seed, tokens));
        let mut doc: Vec<T> = init_vector(dim, &mut rng);
        // Sgd wants a mutable slice even though rows stay frozen here.
        let mut frozen = self.word_weights.clone();
        let mut sgd = Sgd {
            word_weights: &mut frozen,
            dim,
            negative: self.params.negative,
            noise,
            update_words: false,
        };
        let total = steps * known.len();
        let mut done = 0;
        for _ in 0..steps {
            for &w in &known {
                let lr = lit(linear_lr(&self.params, done, total));
                sgd.step(&mut doc, w, lr, &mut rng);
                done += 1;
            }
        }
        Ok(DocVector {
            values: doc,
            doc_id: None,
            no_known_tokens: false,
        })
    }

    /// Text model file: `dim<TAB>vocab_size` header, a `#params` line, vocab
    /// lines `token<TAB>index<TAB>count`, word rows, then `doc_id<TAB>v1..vdim` rows.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{}\t{}", p.dim, self.vocab.len());
        let _ = writeln!(
            out,
            "#params epochs={} negative={} learning_rate={:e} min_learning_rate={:e} min_count={} infer_steps={} seed={}",
            p.epochs, p.negative, p.learning_rate, p.min_learning_rate, p.min_count, p.infer_steps, p.seed
        );
        for (i, (w, c)) in self.vocab.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{w}\t{i}\t{c}");
        }
        let write_row = |out: &mut String, row: &[T]| {
            let mut first = true;
            for v in row {
                if !first {
                    out.push('\t');
                }
                first = false;
                let _ = write!(out, "{:e}", v.to_f64_exact());
            }
            out.push('\n');
        };
        for row in self.word_weights.chunks(p.dim) {
            write_row(&mut out, row);
        }
        for (id, row) in self.doc_ids.iter().zip(self.doc_vectors.chunks(p.dim)) {
            out.push_str(id);
            out.push('\t');
            write_row(&mut out, row);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let loc = |n: usize| format!("embedder line {}", n + 1);
        let parse_row = |n: usize, s: &str, dim: usize| -> Result<Vec<T>> {
            let row = s
                .split('\t')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map(T::from_f64_lossy)
                        .map_err(|_| Error::parse(loc(n), format!("bad number `{v}`")))
                })
                .collect::<Result<Vec<T>>>()?;
            if row.len() != dim {
                return Err(Error::parse(loc(n), format!("expected {dim} values, got {}", row.len())));
            }
            Ok(row)
        };

        let (n, header) = lines.next().ok_or_else(|| Error::parse("embedder", "empty file"))?;
        let (dim, vsize) = header
            .split_once('\t')
            .ok_or_else(|| Error::parse(loc(n), "expected `dim<TAB>vocab_size`"))?;
        let dim: usize = dim.trim().parse().map_err(|_| Error::parse(loc(n), "bad dim"))?;
        let vsize: usize = vsize.trim().parse().map_err(|_| Error::parse(loc(n), "bad vocab size"))?;
        let mut params = EmbedderParams {
            dim,
            ..EmbedderParams::default()
        };
        check_params(&params)?;

        if let Some((n, line)) = lines.peek().copied() {
            if let Some(rest) = line.strip_prefix("#params") {
                lines.next();
                for kv in rest.split_whitespace() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::parse(loc(n), format!("bad field `{kv}`")))?;
                    let bad = || Error::parse(loc(n), format!("bad value for `{k}`"));
                    match k {
                        "epochs" => params.epochs = v.parse().map_err(|_| bad())?,
                        "negative" => params.negative = v.parse().map_err(|_| bad())?,
                        "learning_rate" => params.learning_rate = v.parse().map_err(|_| bad())?,
                        "min_learning_rate" => {
                            params.min_learning_rate = v.parse().map_err(|_| bad())?
                        }
                        "min_count" => params.min_count = v.parse().map_err(|_| bad())?,
                        "infer_steps" => params.infer_steps = v.parse().map_err(|_| bad())?,
                        "seed" => params.seed = v.parse().map_err(|_| bad())?,
                        _ => return Err(Error::parse(loc(n), format!("unknown field `{k}`"))),
                    }
                }
            }
        }

        let mut vocab = Vec::with_capacity(vsize);
        let mut counts = Vec::with_capacity(vsize);
        for i in 0..vsize {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse("embedder", "truncated vocabulary"))?;
            let mut f = line.split('\t');
            let word = f.next().unwrap_or_default().to_string();
            let idx: usize = f
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(loc(n), "expected `token<TAB>index`"))?;
            if idx != i {
                return Err(Error::parse(loc(n), format!("index {idx} out of order")));
            }
            let count: u64 = f.next().and_then(|s| s.parse().ok()).unwrap_or(1);
            vocab.push(word);
            counts.push(count);
        }
        let mut word_weights = Vec::with_capacity(vsize * dim);
        for _ in 0..vsize {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse("embedder", "truncated word rows"))?;
            word_weights.extend(parse_row(n, line, dim)?);
        }
        let mut doc_ids = Vec::new();
        let mut doc_vectors = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(loc(n), "expected `doc_id<TAB>values`"))?;
            doc_ids.push(id.to_string());
            doc_vectors.extend(parse_row(n, rest, dim)?);
        }
        Self::assemble(params, vocab, counts, word_weights, doc_ids, doc_vectors)
    }

    /// Reads plain `doc_id<TAB>v1 .. vdim` rows produced elsewhere. The result
    /// has no vocabulary, so inference on it always yields the zero vector.
    pub fn import_doc_vectors(text: &str) -> Result<Self> {
        let mut doc_ids = Vec::new();
        let mut doc_vectors: Vec<T> = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, rest) = line.split_once('\t').ok_or_else(|| {
                Error::parse(format!("vectors line {}", n + 1), "expected `doc_id<TAB>values`")
            })?;
            let row = rest
                .split(|c: char| c == '\t' || c == ' ')
                .filter(|s| !s.is_empty())
                .map(|v| {
                    v.parse::<f64>().map(T::from_f64_lossy).map_err(|_| {
                        Error::parse(format!("vectors line {}", n + 1), format!("bad number `{v}`"))
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::DimMismatch {
                        expected: d,
                        got: row.len(),
                    })
                }
                _ => {}
            }
            doc_ids.push(id.to_string());
            doc_vectors.extend(row);
        }
        let dim = dim.ok_or(Error::EmptyDataset)?;
        let params = EmbedderParams {
            dim,
            ..EmbedderParams::default()
        };
        check_params(&params)?;
        Self::assemble(params, Vec::new(), Vec::new(), Vec::new(), doc_ids, doc_vectors)
    }

    fn assemble(
        params: EmbedderParams,
        vocab: Vec<String>,
        counts: Vec<u64>,
        word_weights: Vec<T>,
        doc_ids: Vec<String>,
        doc_vectors: Vec<T>,
    ) -> Result<Self> {
        if word_weights.iter().chain(&doc_vectors).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let doc_index = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let noise = (!counts.is_empty()).then(|| NoiseTable::new(&counts));
        Ok(EmbedderModel {
            params,
            vocab,
            counts,
            index,
            word_weights,
            doc_ids,
            doc_index,
            doc_vectors,
            noise,
            epoch_losses: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_params() -> EmbedderParams {
        EmbedderParams {
            dim: 24,
            epochs: 30,
            min_count: 1,
            seed: 3,
            ..EmbedderParams::default()
        }
    }

    /// Two topics with disjoint vocabularies, 50 documents each.
    fn two_clusters() -> Vec<(String, Vec<String>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let topic = |t: usize| -> Vec<String> { (0..20).map(|i| format!("t{t}w{i}")).collect() };
        let (a, b) = (topic(0), topic(1));
        (0..100)
            .map(|i| {
                let words = if i < 50 { &a } else { &b };
                let toks = (0..30).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
                (format!("doc{i:03}"), toks)
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3f64, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 0.7071067811865475).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0f64], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn clusters_separate() {
        let docs = two_clusters();
        let m: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        let vecs: Vec<&[f64]> = docs.iter().map(|(id, _)| m.trained_vector(id).unwrap()).collect();
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..100 {
            for j in (i + 1)..100 {
                let c = cosine_similarity(vecs[i], vecs[j]).unwrap();
                if (i < 50) == (j < 50) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        let (intra, inter) = (intra / ni as f64, inter / nx as f64);
        assert!(intra > inter, "intra {intra} inter {inter}");
        assert!(m.epoch_losses.last() < m.epoch_losses.first());
    }

    #[test]
    fn reinferred_training_doc_is_close() {
        let docs = two_clusters();
        let m: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        let (id, toks) = &docs[7];
        let v = m.infer_vector(toks, 50).unwrap();
        assert!(!v.no_known_tokens);
        let c = cosine_similarity(&v.values, m.trained_vector(id).unwrap()).unwrap();
        assert!(c > 0.5, "cosine {c}");
        assert_eq!(m.infer_vector(toks, 50).unwrap(), v);
    }

    #[test]
    fn unknown_tokens_give_zero_vector() {
        let docs = two_clusters();
        let m: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        let v = m.infer_vector(&["zzz", "qqq"], 10).unwrap();
        assert!(v.no_known_tokens);
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert!(m.infer_vector(&["t0w1"], 0).is_err());
    }

    #[test]
    fn degenerate_single_token_corpus() {
        let docs = vec![("only".to_string(), vec!["word"; 4])];
        let m: EmbedderModel<f64> = train_embedder(&docs, &EmbedderParams::default()).unwrap();
        let v = m.trained_vector("only").unwrap();
        assert_eq!(v.len(), 300);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn training_errors() {
        let docs = vec![("a".to_string(), vec!["once"])];
        assert!(matches!(
            train_embedder::<f64, _>(&docs, &EmbedderParams::default()),
            Err(Error::EmptyVocabulary)
        ));
        let p = EmbedderParams { negative: 0, ..EmbedderParams::default() };
        assert!(train_embedder::<f64, _>(&docs, &p).is_err());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let docs = two_clusters();
        let a: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        let b: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn text_round_trip_preserves_inference() {
        let docs = two_clusters();
        let m: EmbedderModel<f64> = train_embedder(&docs, &small_params()).unwrap();
        let back = EmbedderModel::<f64>::parse(&m.to_text()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.trained_vector("doc010"), m.trained_vector("doc010"));
        let toks = &docs[60].1;
        assert_eq!(back.infer_vector(toks, 20).unwrap(), m.infer_vector(toks, 20).unwrap());

        let m32: EmbedderModel<f32> = train_embedder(&docs, &small_params()).unwrap();
        let back32 = EmbedderModel::<f32>::parse(&m32.to_text()).unwrap();
        assert_eq!(back32.trained_vector("doc001"), m32.trained_vector("doc001"));
    }

    #[test]
    fn imports_plain_vectors() {
        let m = EmbedderModel::<f64>::import_doc_vectors("d1\t1 2 3\nd2\t0.5\t0\t-1\n").unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.trained_vector("d2").unwrap(), &[0.5, 0.0, -1.0]);
        assert!(m.infer_vector(&["x"], 5).unwrap().no_known_tokens);
        assert!(EmbedderModel::<f64>::import_doc_vectors("d1\t1 2\nd2\t1\n").is_err());
    }

    proptest! {
        #[test]
        fn doc_gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 8;
            let mut row = || -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let doc = row();
            let target = row();
            let negs: Vec<Vec<f64>> = (0..5).map(|_| row()).collect();
            let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            let g = negative_sampling_doc_gradient(&doc, &target, &neg_refs);
            let h = 1e-5;
            for i in 0..dim {
                let mut p = doc.clone();
                p[i] += h;
                let mut m = doc.clone();
                m[i] -= h;
                let num = (negative_sampling_loss(&p, &target, &neg_refs)
                    - negative_sampling_loss(&m, &target, &neg_refs)) / (2.0 * h);
                let denom = g[i].abs().max(num.abs()).max(1e-8);
                prop_assert!((g[i] - num).abs() / denom < 1e-4, "dim {}: {} vs {}", i, g[i], num);
            }
        }

        #[test]
        fn cosine_laws(
            u in proptest::collection::vec(-5.0f64..5.0, 6),
            v in proptest::collection::vec(-5.0f64..5.0, 6),
            alpha in 0.01f64..100.0,
        ) {
            let c = cosine_similarity(&u, &v).unwrap();
            prop_assert!((c - cosine_similarity(&v, &u).unwrap()).abs() <= 1e-12);
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            prop_assert!((cosine_similarity(&scaled, &v).unwrap() - c).abs() <= 1e-12);
        }
    }
}
