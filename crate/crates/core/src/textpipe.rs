//! Tokenization, per-node dictionaries and bag-of-words features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default English stoplist.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "if", "in", "into", "is", "it", "its", "itself",
    "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

/// Lowercases, splits on non-alphanumerics and drops short, numeric and stoplisted tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::with_stopwords(DEFAULT_STOPWORDS.iter().copied())
    }
}

impl Tokenizer {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Tokenizer {
            stopwords: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub fn without_stopwords() -> Self {
        Tokenizer {
            stopwords: HashSet::new(),
        }
    }

    /// Reads a stoplist file, one token per line.
    pub fn from_stoplist_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_stopwords(text.lines()))
    }

    /// Stopwords sorted, one per line.
    pub fn stoplist_text(&self) -> String {
        let mut words: Vec<_> = self.stopwords.iter().map(String::as_str).collect();
        words.sort_unstable();
        let mut out = words.join("\n");
        out.push('\n');
        out
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= 2)
            .filter(|t| !t.chars().all(|c| c.is_numeric()))
            .filter(|t| !self.stopwords.contains(*t))
            .map(str::to_string)
            .collect()
    }
}

/// Feature transformation used by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Bow,
    D2v,
    BowD2v,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Bow, FeatureMode::D2v, FeatureMode::BowD2v];

    pub fn uses_bow(self) -> bool {
        matches!(self, FeatureMode::Bow | FeatureMode::BowD2v)
    }

    pub fn uses_embedding(self) -> bool {
        matches!(self, FeatureMode::D2v | FeatureMode::BowD2v)
    }

    /// Lowercase name used on the command line and in bundle paths.
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Bow => "bow",
            FeatureMode::D2v => "d2v",
            FeatureMode::BowD2v => "bow_d2v",
        }
    }

    /// Uppercase tag used in dataset names, e.g. `Dataset_BOW_science`.
    pub fn tag(self) -> &'static str {
        match self {
            FeatureMode::Bow => "BOW",
            FeatureMode::D2v => "D2V",
            FeatureMode::BowD2v => "BOW_D2V",
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(FeatureMode::Bow),
            "d2v" => Ok(FeatureMode::D2v),
            "bow_d2v" | "bow-d2v" | "d2v_bow" | "d2v-bow" => Ok(FeatureMode::BowD2v),
            other => Err(Error::InvalidArgument(format!("unknown feature mode `{other}`"))),
        }
    }
}

/// Dense feature vector tagged with the transformation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub mode: FeatureMode,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(mode: FeatureMode, values: Vec<T>) -> Self {
        FeatureVector { mode, values }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }
}

/// Per-node vocabulary, ordered by descending document frequency then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    pub node_id: String,
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    pub fn from_terms(node_id: impl Into<String>, terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Dictionary {
            node_id: node_id.into(),
            terms,
            index,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// `node_id<TAB>term_count` header, then one term per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\t{}\n", self.node_id, self.terms.len());
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("dictionary", "missing header"))?;
        let (node_id, count) = header
            .split_once('\t')
            .ok_or_else(|| Error::parse("dictionary header", "expected `node_id<TAB>count`"))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::parse("dictionary header", format!("bad count `{count}`")))?;
        let terms: Vec<String> = lines.map(str::to_string).collect();
        if terms.len() != count {
            return Err(Error::parse(
                "dictionary",
                format!("header declares {count} terms, found {}", terms.len()),
            ));
        }
        Self::from_terms(node_id, terms)
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

/// Builds a dictionary from tokenized documents, keeping the `max_terms` most
/// frequent tokens by document frequency.
pub fn build_dictionary<D, S>(node_id: &str, docs: &[D], max_terms: usize) -> Result<Dictionary>
where
    D: AsRef<[S]>,
    S: AsRef<str>,
{
    if docs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<&str> = doc.as_ref().iter().map(AsRef::as_ref).collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    // BTreeMap order is lexicographic; stable sort keeps it for equal df.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let terms = ranked
        .into_iter()
        .take(max_terms)
        .map(|(t, _)| t.to_string())
        .collect();
    Dictionary::from_terms(node_id, terms)
}

/// Raw in-dictionary token counts.
pub fn bow_vectorize<T: Scalar, S: AsRef<str>>(tokens: &[S], dict: &Dictionary) -> FeatureVector<T> {
    let mut values = vec![T::zero(); dict.len()];
    for t in tokens {
        if let Some(i) = dict.position(t.as_ref()) {
            values[i] += T::one();
        }
    }
    FeatureVector::new(FeatureMode::Bow, values)
}

/// `bow ++ d2v`.
pub fn concat_features<T: Scalar>(
    bow: &FeatureVector<T>,
    d2v: &FeatureVector<T>,
) -> Result<FeatureVector<T>> {
    if bow.mode != FeatureMode::Bow {
        return Err(Error::ModeMismatch(format!(
            "first operand must be bow, got {}",
            bow.mode
        )));
    }
    if d2v.mode != FeatureMode::D2v {
        return Err(Error::ModeMismatch(format!(
            "second operand must be d2v, got {}",
            d2v.mode
        )));
    }
    let mut values = Vec::with_capacity(bow.dims() + d2v.dims());
    values.extend_from_slice(&bow.values);
    values.extend_from_slice(&d2v.values);
    Ok(FeatureVector::new(FeatureMode::BowD2v, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        let tk = Tokenizer::with_stopwords(["the"]);
        assert_eq!(tk.tokenize("The cat sat. The cat!"), toks(&["cat", "sat", "cat"]));
        assert!(tk.tokenize("").is_empty());

        let tk = Tokenizer::with_stopwords(["is", "an"]);
        assert_eq!(
            tk.tokenize("Bukovskyite is an iron arsenate sulfate mineral"),
            toks(&["bukovskyite", "iron", "arsenate", "sulfate", "mineral"])
        );
        // the default list covers the same words
        assert_eq!(
            Tokenizer::default().tokenize("Bukovskyite is an iron arsenate sulfate mineral"),
            toks(&["bukovskyite", "iron", "arsenate", "sulfate", "mineral"])
        );
    }

    #[test]
    fn tokenize_drops_short_and_numeric() {
        let tk = Tokenizer::without_stopwords();
        assert_eq!(
            tk.tokenize("a 1969 x2 IMA (kidney-shaped) 60,000"),
            toks(&["x2", "ima", "kidney", "shaped"])
        );
    }

    #[test]
    fn dictionary_orders_by_df_then_lexicographic() {
        // single-letter tokens never survive the tokenizer, so feed tokens directly
        let docs = vec![toks(&["a", "b"]), toks(&["b", "c"]), toks(&["b"])];
        let d = build_dictionary("n", &docs, 2).unwrap();
        assert_eq!(d.terms(), ["b", "a"]);
        let d = build_dictionary("n", &docs, 100).unwrap();
        assert_eq!(d.terms(), ["b", "a", "c"]);
        let d = build_dictionary("n", &[toks(&["x", "x", "x"])], 10).unwrap();
        assert_eq!(d.terms(), ["x"]);
    }

    #[test]
    fn dictionary_errors() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(build_dictionary("n", &empty, 5), Err(Error::EmptyDataset)));
        let blank = vec![Vec::<String>::new(), Vec::new()];
        assert!(matches!(build_dictionary("n", &blank, 5), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn dictionary_text_round_trip() {
        let d = Dictionary::from_terms("science", toks(&["rock", "acid", "lab"])).unwrap();
        let text = d.to_text();
        assert!(text.starts_with("science\t3\n"));
        assert_eq!(Dictionary::parse(&text).unwrap(), d);
        assert!(Dictionary::parse("science\t4\nrock\n").is_err());
    }

    #[test]
    fn bow_counts() {
        let dict = Dictionary::from_terms("n", toks(&["cat", "sat", "dog"])).unwrap();
        let v: FeatureVector<f64> = bow_vectorize(&toks(&["cat", "sat", "cat"]), &dict);
        assert_eq!(v.values, vec![2.0, 1.0, 0.0]);
        let z: FeatureVector<f64> = bow_vectorize(&toks(&["fish"]), &dict);
        assert!(z.is_zero());
    }

    #[test]
    fn concat_layout_and_modes() {
        let bow = FeatureVector::new(FeatureMode::Bow, vec![1.0f64, 0.0, 2.0]);
        let d2v = FeatureVector::new(FeatureMode::D2v, vec![0.5f64; 300]);
        let c = concat_features(&bow, &d2v).unwrap();
        assert_eq!(c.mode, FeatureMode::BowD2v);
        assert_eq!(c.dims(), 303);
        assert_eq!(&c.values[..3], &bow.values[..]);
        assert_eq!(&c.values[3..], &d2v.values[..]);

        let zero = concat_features(
            &FeatureVector::new(FeatureMode::Bow, vec![0.0f64; 20000]),
            &FeatureVector::new(FeatureMode::D2v, vec![0.0f64; 300]),
        )
        .unwrap();
        assert_eq!(zero.dims(), 20300);
        assert!(zero.is_zero());

        assert!(matches!(concat_features(&d2v, &bow), Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn feature_mode_names() {
        for m in FeatureMode::ALL {
            assert_eq!(m.as_str().parse::<FeatureMode>().unwrap(), m);
        }
        assert_eq!(FeatureMode::BowD2v.tag(), "BOW_D2V");
        assert!("tfidf".parse::<FeatureMode>().is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "[a-zA-Z0-9 .,!?'éÅß-]{0,80}") {
            let tk = Tokenizer::default();
            let once = tk.tokenize(&text);
            prop_assert_eq!(tk.tokenize(&once.join(" ")), once);
        }

        #[test]
        fn bow_ignores_word_order(
            words in proptest::collection::vec("[a-d]{2,3}", 0..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let dict = Dictionary::from_terms(
                "n",
                toks(&["aa", "ab", "bb", "cd", "dda", "abc"]),
            ).unwrap();
            let mut shuffled = words.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a: FeatureVector<f64> = bow_vectorize(&words, &dict);
            let b: FeatureVector<f64> = bow_vectorize(&shuffled, &dict);
            prop_assert_eq!(&a, &b);
            let in_dict = words.iter().filter(|w| dict.position(w).is_some()).count();
            prop_assert_eq!(a.values.iter().sum::<f64>(), in_dict as f64);
        }
    }
}
