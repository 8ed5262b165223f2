//! Document corpora mirrored on the taxonomy, their splits, and per-node datasets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::taxonomy::{NodeIdx, Taxonomy};

/// Default upper bound on samples per class in a node dataset.
pub const DEFAULT_CAP_PER_CLASS: usize = 500;
/// Corpus-A share of the A/B split.
pub const AB_RATIO: f64 = 0.95;
/// Training share of the per-node Training_CV / Validation_LOO split.
pub const CV_RATIO: f64 = 0.9;
/// Minimum samples per class before the 90/10 split.
pub const MIN_SAMPLES_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub leaf_id: String,
}

/// Labeled documents indexed by leaf.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    per_leaf: BTreeMap<String, Vec<usize>>,
}

/// `⌈ratio·n⌉`, robust to representation error in `ratio·n`.
pub fn ceil_share(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    ((exact - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn check_manifest_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!(
            "`{s}` contains a tab or newline and cannot appear in a manifest"
        )));
    }
    Ok(())
}

impl Corpus {
    /// Builds a corpus, checking every document against the taxonomy.
    pub fn new(documents: Vec<Document>, taxonomy: &Taxonomy) -> Result<Self> {
        let mut per_leaf: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut seen = HashMap::new();
        for (i, d) in documents.iter().enumerate() {
            let leaf = taxonomy.get(&d.leaf_id)?;
            if !taxonomy.is_leaf(leaf) {
                return Err(Error::InvalidArgument(format!(
                    "document `{}` is labeled with internal node `{}`",
                    d.doc_id, d.leaf_id
                )));
            }
            if d.text.trim().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "document `{}` has empty text",
                    d.doc_id
                )));
            }
            check_manifest_field(&d.doc_id)?;
            if seen.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(d.doc_id.clone()));
            }
            per_leaf.entry(d.leaf_id.clone()).or_default().push(i);
        }
        for idxs in per_leaf.values_mut() {
            idxs.sort_by(|&a, &b| documents[a].doc_id.cmp(&documents[b].doc_id));
        }
        Ok(Corpus {
            documents,
            per_leaf,
        })
    }

    fn subset_by_index(&self, keep: &[bool]) -> Corpus {
        let mut documents = Vec::new();
        let mut remap = vec![usize::MAX; self.documents.len()];
        for (i, d) in self.documents.iter().enumerate() {
            if keep[i] {
                remap[i] = documents.len();
                documents.push(d.clone());
            }
        }
        let per_leaf = self
            .per_leaf
            .iter()
            .map(|(leaf, idxs)| {
                let kept: Vec<usize> = idxs
                    .iter()
                    .filter(|&&i| keep[i])
                    .map(|&i| remap[i])
                    .collect();
                (leaf.clone(), kept)
            })
            .filter(|(_, v)| !v.is_empty())
            .collect();
        Corpus {
            documents,
            per_leaf,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn leaves(&self) -> impl Iterator<Item = &str> {
        self.per_leaf.keys().map(String::as_str)
    }

    /// Documents of one leaf, ordered by doc id.
    pub fn leaf_documents(&self, leaf_id: &str) -> Vec<&Document> {
        self.per_leaf
            .get(leaf_id)
            .map(|idxs| idxs.iter().map(|&i| &self.documents[i]).collect())
            .unwrap_or_default()
    }

    pub fn leaf_count(&self, leaf_id: &str) -> usize {
        self.per_leaf.get(leaf_id).map_or(0, Vec::len)
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// Result of [`ingest`]: the corpus plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

/// Reads `<root>/<child>/<leaf>/<doc>` files into a corpus. Doc ids are the
/// `/`-separated paths relative to `corpus_dir`.
pub fn ingest(corpus_dir: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Ingested> {
    let root_dir = corpus_dir.as_ref();
    if !root_dir.is_dir() {
        return Err(Error::io(
            root_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        ));
    }
    let mut docs = Vec::new();
    let mut warnings = Vec::new();
    let mut visited = vec![false; taxonomy.len()];
    walk(
        root_dir,
        taxonomy.root(),
        "",
        taxonomy,
        &mut docs,
        &mut warnings,
        &mut visited,
    )?;
    for leaf in taxonomy.leaves() {
        if !visited[leaf] && leaf != taxonomy.root() {
            warnings.push(format!("leaf `{}` has no folder", taxonomy.id(leaf)));
        }
    }
    let corpus = Corpus::new(docs, taxonomy)?;
    Ok(Ingested { corpus, warnings })
}

fn walk(
    dir: &Path,
    node: NodeIdx,
    rel: &str,
    taxonomy: &Taxonomy,
    docs: &mut Vec<Document>,
    warnings: &mut Vec<String>,
    visited: &mut [bool],
) -> Result<()> {
    visited[node] = true;
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());

    let mut found = 0usize;
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = entry.path();
        let rel_child = if rel.is_empty() {
            name.clone()
        } else {
            format!("{rel}/{name}")
        };
        let file_type = entry.file_type().map_err(|e| Error::io(&path, e))?;
        if file_type.is_dir() {
            let child = taxonomy
                .children(node)
                .iter()
                .copied()
                .find(|&c| taxonomy.id(c) == name)
                .ok_or_else(|| Error::UnknownFolder(name.clone()))?;
            walk(&path, child, &rel_child, taxonomy, docs, warnings, visited)?;
        } else if taxonomy.is_leaf(node) && node != taxonomy.root() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if text.trim().is_empty() {
                warnings.push(format!("document `{rel_child}` is empty, skipped"));
                continue;
            }
            found += 1;
            docs.push(Document {
                doc_id: rel_child,
                text,
                leaf_id: taxonomy.id(node).to_string(),
            });
        } else {
            warnings.push(format!("file `{rel_child}` outside a leaf folder, ignored"));
        }
    }
    if taxonomy.is_leaf(node) && node != taxonomy.root() && found == 0 {
        warnings.push(format!("leaf folder `{rel}` is empty"));
    }
    Ok(())
}

/// Per-leaf stratified split: each leaf sends `⌈ratio·n⌉` shuffled documents to A.
pub fn split_ab(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1], got {ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_a = vec![false; corpus.len()];
    for (leaf, idxs) in &corpus.per_leaf {
        if idxs.len() < 2 {
            return Err(Error::TooFewDocuments {
                leaf: leaf.clone(),
                count: idxs.len(),
                needed: 2,
            });
        }
        let mut shuffled = idxs.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..ceil_share(ratio, shuffled.len())] {
            in_a[i] = true;
        }
    }
    let in_b: Vec<bool> = in_a.iter().map(|x| !x).collect();
    Ok((corpus.subset_by_index(&in_a), corpus.subset_by_index(&in_b)))
}

/// `doc_id<TAB>A|B` lines in corpus order.
pub fn split_manifest(a: &Corpus, b: &Corpus) -> String {
    let mut out = String::new();
    for d in &a.documents {
        out.push_str(&format!("{}\tA\n", d.doc_id));
    }
    for d in &b.documents {
        out.push_str(&format!("{}\tB\n", d.doc_id));
    }
    out
}

/// Re-applies a persisted A/B manifest to a corpus.
pub fn apply_split_manifest(corpus: &Corpus, manifest: &str) -> Result<(Corpus, Corpus)> {
    let pos: HashMap<&str, usize> = corpus
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    let mut side: Vec<Option<bool>> = vec![None; corpus.len()];
    for (n, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(format!("split manifest line {}", n + 1), "missing tab"))?;
        let &i = pos
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("manifest names unknown doc `{id}`")))?;
        side[i] = Some(match s.trim() {
            "A" => true,
            "B" => false,
            other => {
                return Err(Error::parse(
                    format!("split manifest line {}", n + 1),
                    format!("unknown side `{other}`"),
                ))
            }
        });
    }
    let in_a: Vec<bool> = side.iter().map(|s| *s == Some(true)).collect();
    let in_b: Vec<bool> = side.iter().map(|s| *s == Some(false)).collect();
    Ok((corpus.subset_by_index(&in_a), corpus.subset_by_index(&in_b)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub doc: Document,
    /// Index into [`NodeDataset::classes`].
    pub label: usize,
}

/// Balanced, child-labeled training set for one internal node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDataset {
    pub name: String,
    pub node_id: String,
    /// Child ids of the node, in taxonomy order.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    pub class_counts: Vec<usize>,
    /// Set when class counts differ by more than one.
    pub imbalanced: bool,
}

impl NodeDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `doc_id<TAB>class_label` lines.
    pub fn manifest(&self) -> String {
        self.samples
            .iter()
            .map(|s| format!("{}\t{}\n", s.doc.doc_id, self.classes[s.label]))
            .collect()
    }

    fn with_samples(&self, name: String, samples: Vec<Sample>) -> NodeDataset {
        let mut class_counts = vec![0; self.classes.len()];
        for s in &samples {
            class_counts[s.label] += 1;
        }
        let imbalanced = spread(&class_counts) > 1;
        NodeDataset {
            name,
            node_id: self.node_id.clone(),
            classes: self.classes.clone(),
            samples,
            class_counts,
            imbalanced,
        }
    }
}

fn spread(counts: &[usize]) -> usize {
    let max = counts.iter().max().copied().unwrap_or(0);
    let min = counts.iter().min().copied().unwrap_or(0);
    max - min
}

/// Assembles the dataset for `node_id`: each child class draws round-robin
/// over the leaves beneath it (docs in id order) up to `cap_per_class`.
///
/// With `cap_per_class = None` the cap is the smallest child's document
/// count, clamped to [`DEFAULT_CAP_PER_CLASS`].
pub fn build_node_dataset(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    node_id: &str,
    cap_per_class: Option<usize>,
) -> Result<NodeDataset> {
    let node = taxonomy.get(node_id)?;
    let children = taxonomy.children(node);
    if children.len() < 2 {
        return Err(Error::NotExpandable(node_id.to_string()));
    }

    let mut pools: Vec<Vec<Vec<&Document>>> = Vec::with_capacity(children.len());
    for &child in children {
        let per_leaf: Vec<Vec<&Document>> = taxonomy
            .leaves_under(child)
            .into_iter()
            .map(|leaf| corpus.leaf_documents(taxonomy.id(leaf)))
            .collect();
        if per_leaf.iter().all(Vec::is_empty) {
            return Err(Error::EmptySubtree {
                node: node_id.to_string(),
                child: taxonomy.id(child).to_string(),
            });
        }
        pools.push(per_leaf);
    }

    let cap = cap_per_class.unwrap_or_else(|| {
        pools
            .iter()
            .map(|p| p.iter().map(Vec::len).sum::<usize>())
            .min()
            .unwrap_or(0)
            .min(DEFAULT_CAP_PER_CLASS)
    });

    let mut samples = Vec::new();
    for (label, per_leaf) in pools.iter().enumerate() {
        let mut cursor = vec![0usize; per_leaf.len()];
        let mut taken = 0;
        'fill: loop {
            let mut progressed = false;
            for (leaf_pos, docs) in per_leaf.iter().enumerate() {
                if taken == cap {
                    break 'fill;
                }
                if let Some(doc) = docs.get(cursor[leaf_pos]) {
                    cursor[leaf_pos] += 1;
                    taken += 1;
                    progressed = true;
                    samples.push(Sample {
                        doc: (*doc).clone(),
                        label,
                    });
                }
            }
            if !progressed {
                break;
            }
        }
    }

    let template = NodeDataset {
        name: String::new(),
        node_id: node_id.to_string(),
        classes: children.iter().map(|&c| taxonomy.id(c).to_string()).collect(),
        samples: Vec::new(),
        class_counts: Vec::new(),
        imbalanced: false,
    };
    Ok(template.with_samples(format!("Dataset_{node_id}"), samples))
}

/// Per-class stratified split; the first side takes `⌈ratio·n⌉` of each class.
pub fn stratified_split(
    d: &NodeDataset,
    ratio: f64,
    min_per_class: usize,
    seed: u64,
    names: (String, String),
) -> Result<(NodeDataset, NodeDataset)> {
    for (class, &count) in d.classes.iter().zip(&d.class_counts) {
        if count < min_per_class {
            return Err(Error::TooFewSamples {
                class: class.clone(),
                count,
                needed: min_per_class,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = vec![false; d.samples.len()];
    for class in 0..d.classes.len() {
        let mut idxs: Vec<usize> = (0..d.samples.len())
            .filter(|&i| d.samples[i].label == class)
            .collect();
        idxs.shuffle(&mut rng);
        for &i in &idxs[..ceil_share(ratio, idxs.len())] {
            first[i] = true;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (s, f) in d.samples.iter().zip(first) {
        if f {
            a.push(s.clone());
        } else {
            b.push(s.clone());
        }
    }
    Ok((d.with_samples(names.0, a), d.with_samples(names.1, b)))
}

/// The 90/10 Training_CV / Validation_LOO split.
pub fn split_cv_loo(d: &NodeDataset, seed: u64) -> Result<(NodeDataset, NodeDataset)> {
    stratified_split(
        d,
        CV_RATIO,
        MIN_SAMPLES_PER_CLASS,
        seed,
        (
            format!("{}_Training_CV", d.name),
            format!("{}_Validation_LOO", d.name),
        ),
    )
}
