//! Seeded synthetic taxonomy and corpus with controllable vocabulary overlap.
//!
//! Every root child gets `leaves_per_child` leaves. Each leaf owns a topical
//! vocabulary; a `shared_fraction` of it is drawn from a pool common to its
//! siblings. Documents mix topical words with global filler.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;
use crate::textpipe::DEFAULT_STOPWORDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub root_children: usize,
    pub leaves_per_child: usize,
    pub docs_per_leaf: usize,
    pub words_per_leaf: usize,
    pub shared_fraction: f64,
    pub filler_words: usize,
    pub doc_length: usize,
    /// Probability that a token comes from the leaf vocabulary rather than filler.
    pub topical_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            root_children: 4,
            leaves_per_child: 3,
            docs_per_leaf: 80,
            words_per_leaf: 40,
            shared_fraction: 0.3,
            filler_words: 200,
            doc_length: 80,
            topical_rate: 0.5,
            seed: 7,
        }
    }
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "ch", "d", "dr", "f", "g", "gl", "h", "j", "k", "l", "m", "n", "p", "pl", "qu",
    "r", "s", "sh", "st", "t", "tr", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];
const CODAS: &[&str] = &["", "n", "r", "s", "l", "m", "x", "nd", "rt"];

struct WordMint {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordMint {
    fn new(seed: u64) -> Self {
        WordMint {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            w.push_str(CODAS.choose(&mut self.rng).expect("non-empty"));
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

pub fn child_id(i: usize) -> String {
    format!("topic_{}", i + 1)
}

pub fn leaf_id(child: usize, leaf: usize) -> String {
    format!("{}_{}", child_id(child), leaf + 1)
}

pub fn synthetic_taxonomy(spec: &SyntheticSpec) -> Result<Taxonomy> {
    if spec.root_children < 2 || spec.leaves_per_child == 0 {
        return Err(Error::InvalidArgument(
            "need at least two root children and one leaf per child".into(),
        ));
    }
    let mut text = String::from("root|Root\n");
    for c in 0..spec.root_children {
        let id = child_id(c);
        text.push_str(&format!("  {id}|Topic {}\n", c + 1));
        for l in 0..spec.leaves_per_child {
            let leaf = leaf_id(c, l);
            text.push_str(&format!("    {leaf}|Topic {} subject {}\n", c + 1, l + 1));
        }
    }
    Taxonomy::parse(&text)
}

/// Taxonomy plus documents with ids `<child>/<leaf>/docNNN.txt`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Taxonomy, Corpus)> {
    if !(0.0..=1.0).contains(&spec.shared_fraction) || !(0.0..=1.0).contains(&spec.topical_rate) {
        return Err(Error::InvalidArgument("fractions must lie in [0, 1]".into()));
    }
    if spec.words_per_leaf == 0 || spec.doc_length == 0 || spec.filler_words == 0 {
        return Err(Error::InvalidArgument("vocabulary sizes and document length must be positive".into()));
    }
    let taxonomy = synthetic_taxonomy(spec)?;
    let mut mint = WordMint::new(spec.seed);
    let filler = mint.words(spec.filler_words);
    let shared_per_leaf = (spec.words_per_leaf as f64 * spec.shared_fraction).round() as usize;
    let own_per_leaf = spec.words_per_leaf - shared_per_leaf;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut docs = Vec::new();
    for c in 0..spec.root_children {
        let pool = mint.words(shared_per_leaf.max(1) * 2);
        for l in 0..spec.leaves_per_child {
            let mut vocab = mint.words(own_per_leaf);
            vocab.extend(pool.choose_multiple(&mut rng, shared_per_leaf).cloned());
            let leaf = leaf_id(c, l);
            for d in 0..spec.docs_per_leaf {
                let words: Vec<&str> = (0..spec.doc_length)
                    .map(|_| {
                        if rng.gen::<f64>() < spec.topical_rate {
                            vocab.choose(&mut rng).expect("non-empty")
                        } else {
                            filler.choose(&mut rng).expect("non-empty")
                        }
                        .as_str()
                    })
                    .collect();
                docs.push(Document {
                    doc_id: format!("{}/{leaf}/doc{d:03}.txt", child_id(c)),
                    text: words.join(" "),
                    leaf_id: leaf.clone(),
                });
            }
        }
    }
    let corpus = Corpus::new(docs, &taxonomy)?;
    Ok((taxonomy, corpus))
}

/// Writes `taxonomy.txt` and the `corpus/` tree under `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<(Taxonomy, Corpus)> {
    let dir = dir.as_ref();
    let (t, c) = generate(spec)?;
    let tax = dir.join("taxonomy.txt");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    std::fs::write(&tax, t.to_text()).map_err(|e| Error::io(&tax, e))?;
    for d in c.documents() {
        let path = dir.join("corpus").join(&d.doc_id);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, &d.text).map_err(|e| Error::io(&path, e))?;
    }
    Ok((t, c))
}
