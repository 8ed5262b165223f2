//! Per-node training: dataset assembly, 5-fold cross-validation, final fit on
//! the training split, one-shot hold-out evaluation, and model bundles.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_node_dataset, split_cv_loo, Corpus, NodeDataset};
use crate::embedding::{train_embedder, EmbedderModel, EmbedderParams};
use crate::error::{Error, Result};
use crate::metrics::EvalMetrics;
use crate::mlp::{FitParams, Network, NetworkSpec};
use crate::scalar::Scalar;
use crate::taxonomy::Taxonomy;
use crate::textpipe::{build_dictionary, Dictionary, FeatureMode, Tokenizer};

pub const DEFAULT_FOLDS: usize = 5;
/// Gap between cross-validation and hold-out accuracy that raises a warning.
pub const CV_TEST_GAP_WARNING: f64 = 0.05;

/// Mixes a global seed with a label into an independent stream seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub folds: usize,
    /// Per-class sample cap; `None` uses the smallest child's count (at most 500).
    pub cap_per_class: Option<usize>,
    pub max_terms: usize,
    pub embedder: EmbedderParams,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let fit = FitParams::default();
        TrainConfig {
            hidden_layers: vec![256],
            epochs: fit.epochs,
            batch_size: fit.batch_size,
            learning_rate: fit.learning_rate,
            beta1: fit.beta1,
            beta2: fit.beta2,
            epsilon: fit.epsilon,
            folds: DEFAULT_FOLDS,
            cap_per_class: None,
            max_terms: 20_000,
            embedder: EmbedderParams::default(),
            jobs: 1,
        }
    }
}

impl TrainConfig {
    fn fit_params(&self, seed: u64) -> FitParams {
        FitParams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
        }
    }

    fn network<T: Scalar>(&self, input_dim: usize, outputs: usize, seed: u64) -> Result<Network<T>> {
        Network::init(NetworkSpec::new(input_dim, self.hidden_layers.clone(), outputs, seed))
    }
}

/// Stratified `k`-fold assignment. Each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes stay within one of each other.
pub fn stratified_kfold(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in 0..n_classes {
        let mut idxs: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idxs.shuffle(&mut rng);
        for i in idxs {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldLog {
    pub fold: usize,
    pub train_size: usize,
    /// Held-out documents of this fold.
    pub validation_docs: Vec<String>,
    /// Held-out count per class.
    pub class_counts: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub cv_accuracy: f64,
    pub folds: Vec<FoldLog>,
}

/// Trains on every `(k-1, 1)` fold combination of `d` and returns the mean held-out accuracy.
/// `features[i]` belongs to `d.samples[i]`.
pub fn cross_validate<T: Scalar>(
    d: &NodeDataset,
    features: &[Vec<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CvOutcome> {
    let k = cfg.folds;
    if features.len() != d.samples.len() {
        return Err(Error::DimMismatch {
            expected: d.samples.len(),
            got: features.len(),
        });
    }
    for (class, &count) in d.classes.iter().zip(&d.class_counts) {
        if count < k {
            return Err(Error::TooFewSamples {
                class: class.clone(),
                count,
                needed: k,
            });
        }
    }
    let input_dim = features.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
    let labels = d.labels();
    let folds = stratified_kfold(&labels, d.classes.len(), k, derive_seed(seed, "folds"))?;

    let mut logs = Vec::with_capacity(k);
    for (f, held) in folds.iter().enumerate() {
        let mut is_held = vec![false; labels.len()];
        for &i in held {
            is_held[i] = true;
        }
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..labels.len() {
            if is_held[i] {
                vx.push(features[i].as_slice());
                vy.push(labels[i]);
            } else {
                tx.push(features[i].as_slice());
                ty.push(labels[i]);
            }
        }
        let fold_seed = derive_seed(seed, &format!("fold{f}"));
        let mut net = cfg.network::<T>(input_dim, d.classes.len(), fold_seed)?;
        net.fit(&tx, &ty, &cfg.fit_params(fold_seed))?;
        let accuracy = net.evaluate(&vx, &vy)?.accuracy;
        let mut class_counts = vec![0; d.classes.len()];
        for &y in &vy {
            class_counts[y] += 1;
        }
        logs.push(FoldLog {
            fold: f,
            train_size: tx.len(),
            validation_docs: held.iter().map(|&i| d.samples[i].doc.doc_id.clone()).collect(),
            class_counts,
            accuracy,
        });
    }
    Ok(CvOutcome {
        cv_accuracy: logs.iter().map(|l| l.accuracy).sum::<f64>() / k as f64,
        folds: logs,
    })
}

/// Feature vector for one document at one node.
pub fn document_features<T: Scalar, S: AsRef<str>>(
    mode: FeatureMode,
    tokens: &[S],
    dictionary: Option<&Dictionary>,
    doc_vector: Option<&[T]>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    if mode.uses_bow() {
        let dict = dictionary
            .ok_or_else(|| Error::ModeMismatch(format!("{mode} features need a dictionary")))?;
        out = vec![T::zero(); dict.len()];
        for t in tokens {
            if let Some(i) = dict.position(t.as_ref()) {
                out[i] += T::one();
            }
        }
    }
    if mode.uses_embedding() {
        let v = doc_vector
            .ok_or_else(|| Error::ModeMismatch(format!("{mode} features need a document vector")))?;
        out.extend_from_slice(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub mode: FeatureMode,
    pub classes: Vec<String>,
    pub dataset_size: usize,
    pub training_size: usize,
    pub validation_size: usize,
    pub cv_accuracy: f64,
    pub training_accuracy: f64,
    pub test_accuracy: f64,
    /// Metrics of the final network on the hold-out split.
    pub metrics: EvalMetrics,
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel<T> {
    pub node_id: String,
    pub mode: FeatureMode,
    pub dictionary: Option<Dictionary>,
    pub network: Network<T>,
    pub report: NodeReport,
    pub folds: Vec<FoldLog>,
    /// `doc_id<TAB>class<TAB>split` rows of the node dataset.
    pub dataset_manifest: String,
}

/// Shared inputs for training nodes of one hierarchy.
pub struct TrainContext<'a, T> {
    pub taxonomy: &'a Taxonomy,
    pub corpus: &'a Corpus,
    pub tokenizer: &'a Tokenizer,
    pub mode: FeatureMode,
    pub config: &'a TrainConfig,
    /// Document vectors by doc id; required for embedding modes.
    pub doc_vectors: Option<&'a HashMap<String, Vec<T>>>,
}

/// Builds, cross-validates, fits and evaluates the network of `node_id`.
pub fn train_node<T: Scalar>(ctx: &TrainContext<'_, T>, node_id: &str, seed: u64) -> Result<NodeModel<T>> {
    train_node_inner(ctx, node_id, seed).map_err(|e| e.in_node(node_id))
}

fn train_node_inner<T: Scalar>(ctx: &TrainContext<'_, T>, node_id: &str, seed: u64) -> Result<NodeModel<T>> {
    let mode = ctx.mode;
    let dataset = build_node_dataset(ctx.corpus, ctx.taxonomy, node_id, ctx.config.cap_per_class)?;
    let tokens: Vec<Vec<String>> = dataset
        .samples
        .iter()
        .map(|s| ctx.tokenizer.tokenize(&s.doc.text))
        .collect();
    let dictionary = if mode.uses_bow() {
        Some(build_dictionary(node_id, &tokens, ctx.config.max_terms)?)
    } else {
        None
    };
    let features: Vec<Vec<T>> = dataset
        .samples
        .iter()
        .zip(&tokens)
        .map(|(s, toks)| {
            let dv = match ctx.doc_vectors {
                Some(map) if mode.uses_embedding() => Some(
                    map.get(&s.doc.doc_id)
                        .map(Vec::as_slice)
                        .ok_or_else(|| Error::Bundle(format!("no vector for `{}`", s.doc.doc_id)))?,
                ),
                _ => None,
            };
            document_features(mode, toks, dictionary.as_ref(), dv)
        })
        .collect::<Result<_>>()?;
    let position: HashMap<&str, usize> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.doc.doc_id.as_str(), i))
        .collect();

    let (cv, loo) = split_cv_loo(&dataset, derive_seed(seed, "cv_loo"))?;
    let pick = |d: &NodeDataset| -> Vec<Vec<T>> {
        d.samples
            .iter()
            .map(|s| features[position[s.doc.doc_id.as_str()]].clone())
            .collect()
    };
    let cv_x = pick(&cv);
    let loo_x = pick(&loo);
    let outcome = cross_validate(&cv, &cv_x, ctx.config, derive_seed(seed, "cv"))?;

    let input_dim = features.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
    let final_seed = derive_seed(seed, "final");
    let mut network = ctx.config.network::<T>(input_dim, dataset.classes.len(), final_seed)?;
    let fit = network.fit(&cv_x, &cv.labels(), &ctx.config.fit_params(final_seed))?;
    let metrics = network.evaluate(&loo_x, &loo.labels())?;

    let mut warnings = Vec::new();
    if dataset.imbalanced {
        warnings.push(format!("class counts are imbalanced: {:?}", dataset.class_counts));
    }
    if (outcome.cv_accuracy - metrics.accuracy).abs() > CV_TEST_GAP_WARNING {
        warnings.push(format!(
            "cv accuracy {:.4} and test accuracy {:.4} differ by more than {CV_TEST_GAP_WARNING}",
            outcome.cv_accuracy, metrics.accuracy
        ));
    }

    let mut dataset_manifest = String::new();
    for (d, tag) in [(&cv, "cv"), (&loo, "loo")] {
        for s in &d.samples {
            let _ = writeln!(dataset_manifest, "{}\t{}\t{tag}", s.doc.doc_id, d.classes[s.label]);
        }
    }
    let report = NodeReport {
        node_id: node_id.to_string(),
        mode,
        classes: dataset.classes.clone(),
        dataset_size: dataset.len(),
        training_size: cv.len(),
        validation_size: loo.len(),
        cv_accuracy: outcome.cv_accuracy,
        training_accuracy: fit.training_accuracy,
        test_accuracy: metrics.accuracy,
        metrics,
        epoch_losses: fit.epoch_losses,
        warnings,
    };
    Ok(NodeModel {
        node_id: node_id.to_string(),
        mode,
        dictionary,
        network,
        report,
        folds: outcome.folds,
        dataset_manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node_id: String,
    pub message: String,
}

/// One network per expandable node plus the shared tokenizer and embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel<T> {
    pub taxonomy: Taxonomy,
    pub mode: FeatureMode,
    pub tokenizer: Tokenizer,
    pub node_models: BTreeMap<String, NodeModel<T>>,
    pub embedder: Option<EmbedderModel<T>>,
    pub failures: Vec<NodeFailure>,
    pub seed: u64,
    pub config: TrainConfig,
    /// Caller-supplied run configuration stored alongside the bundle.
    pub run_config: Option<serde_json::Value>,
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Trains every expandable node. Node failures are collected, not fatal; the
/// embedder is trained first on all of `corpus` when the mode needs it.
pub fn train_hierarchy<T: Scalar>(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    mode: FeatureMode,
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    seed: u64,
) -> Result<HierarchicalModel<T>> {
    let pool = build_pool(config.jobs)?;
    pool.install(|| {
        let tokens: Vec<(String, Vec<String>)> = corpus
            .documents()
            .par_iter()
            .map(|d| (d.doc_id.clone(), tokenizer.tokenize(&d.text)))
            .collect();

        let (embedder, doc_vectors) = if mode.uses_embedding() {
            let params = EmbedderParams {
                seed: derive_seed(seed, "embedder"),
                ..config.embedder.clone()
            };
            let model: EmbedderModel<T> = train_embedder(&tokens, &params)?;
            // Features come from re-inference so training and classification see the same function of the text.
            let vectors: HashMap<String, Vec<T>> = tokens
                .par_iter()
                .map(|(id, toks)| {
                    model
                        .infer_vector(toks, params.infer_steps)
                        .map(|v| (id.clone(), v.values))
                })
                .collect::<Result<_>>()?;
            (Some(model), Some(vectors))
        } else {
            (None, None)
        };

        let ctx = TrainContext {
            taxonomy,
            corpus,
            tokenizer,
            mode,
            config,
            doc_vectors: doc_vectors.as_ref(),
        };
        let nodes: Vec<String> = taxonomy
            .non_leaf_nodes()
            .into_iter()
            .map(|n| taxonomy.id(n).to_string())
            .collect();
        let results: Vec<(String, Result<NodeModel<T>>)> = nodes
            .par_iter()
            .map(|id| (id.clone(), train_node(&ctx, id, derive_seed(seed, id))))
            .collect();

        let mut node_models = BTreeMap::new();
        let mut failures = Vec::new();
        for (id, r) in results {
            match r {
                Ok(m) => {
                    node_models.insert(id, m);
                }
                Err(e) => failures.push(NodeFailure {
                    node_id: id,
                    message: e.to_string(),
                }),
            }
        }
        Ok(HierarchicalModel {
            taxonomy: taxonomy.clone(),
            mode,
            tokenizer: tokenizer.clone(),
            node_models,
            embedder,
            failures,
            seed,
            config: config.clone(),
            run_config: None,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeManifest {
    pub seed: u64,
    pub scalar_bytes: u8,
    pub nodes: Vec<String>,
    pub failures: Vec<NodeFailure>,
    pub config: TrainConfig,
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleManifest {
    pub taxonomy_hash: String,
    pub modes: BTreeMap<String, ModeManifest>,
}

impl BundleManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn fold_log_text(folds: &[FoldLog]) -> String {
    let mut out = String::from("fold\ttrain_size\tvalidation_size\taccuracy\tclass_counts\n");
    for f in folds {
        let counts: Vec<String> = f.class_counts.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:e}\t{}",
            f.fold,
            f.train_size,
            f.validation_docs.len(),
            f.accuracy,
            counts.join(",")
        );
    }
    out
}

impl<T: Scalar> HierarchicalModel<T> {
    /// Writes `<dir>/<mode>/...` and merges this mode into `<dir>/manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mode_dir = dir.join(self.mode.as_str());
        std::fs::create_dir_all(&mode_dir).map_err(|e| Error::io(&mode_dir, e))?;

        let hash = self.taxonomy.content_hash();
        let mut manifest = if dir.join("manifest.json").exists() {
            BundleManifest::load(dir)?
        } else {
            BundleManifest::default()
        };
        if !manifest.taxonomy_hash.is_empty() && manifest.taxonomy_hash != hash {
            // A different taxonomy invalidates the other modes.
            manifest.modes.clear();
        }
        manifest.taxonomy_hash = hash;
        write(&dir.join("taxonomy.txt"), self.taxonomy.to_text())?;
        write(&mode_dir.join("stoplist.txt"), self.tokenizer.stoplist_text())?;

        for (id, node) in &self.node_models {
            let nd = mode_dir.join(id);
            std::fs::create_dir_all(&nd).map_err(|e| Error::io(&nd, e))?;
            node.network.save(nd.join("network.bin"))?;
            if let Some(d) = &node.dictionary {
                d.save(nd.join("dictionary.txt"))?;
            }
            write(&nd.join("report.json"), serde_json::to_string_pretty(&node.report)?)?;
            write(&nd.join("folds.json"), serde_json::to_string_pretty(&node.folds)?)?;
            write(&nd.join("folds.tsv"), fold_log_text(&node.folds))?;
            write(&nd.join("dataset.tsv"), &node.dataset_manifest)?;
        }
        let emb = mode_dir.join("embedder.bin");
        match &self.embedder {
            Some(e) => e.save(&emb)?,
            None if emb.exists() => std::fs::remove_file(&emb).map_err(|e| Error::io(&emb, e))?,
            None => {}
        }
        write(&mode_dir.join("report.txt"), report_table(self))?;

        manifest.modes.insert(
            self.mode.as_str().to_string(),
            ModeManifest {
                seed: self.seed,
                scalar_bytes: T::WIDTH,
                nodes: self.node_models.keys().cloned().collect(),
                failures: self.failures.clone(),
                config: self.config.clone(),
                run_config: self.run_config.clone(),
            },
        );
        write(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
    }

    pub fn load(dir: impl AsRef<Path>, mode: FeatureMode) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = BundleManifest::load(dir)?;
        let entry = manifest
            .modes
            .get(mode.as_str())
            .ok_or_else(|| Error::Bundle(format!("no `{mode}` model in {}", dir.display())))?;
        if entry.scalar_bytes != T::WIDTH {
            return Err(Error::Bundle(format!(
                "bundle stores {}-byte scalars, loader expects {}",
                entry.scalar_bytes,
                T::WIDTH
            )));
        }
        let taxonomy = Taxonomy::parse(&read(&dir.join("taxonomy.txt"))?)?;
        if taxonomy.content_hash() != manifest.taxonomy_hash {
            return Err(Error::Bundle("taxonomy hash does not match manifest".into()));
        }
        let mode_dir = dir.join(mode.as_str());
        let tokenizer = Tokenizer::from_stoplist_file(mode_dir.join("stoplist.txt"))?;
        let embedder = if mode.uses_embedding() {
            Some(EmbedderModel::load(mode_dir.join("embedder.bin"))?)
        } else {
            None
        };

        let mut node_models = BTreeMap::new();
        for id in &entry.nodes {
            let nd = mode_dir.join(id);
            let node = taxonomy.get(id)?;
            let network = Network::<T>::load(nd.join("network.bin"))?;
            if network.spec.output_dim != taxonomy.children(node).len() {
                return Err(Error::Bundle(format!("network of `{id}` has the wrong output size")));
            }
            let dictionary = if mode.uses_bow() {
                Some(Dictionary::load(nd.join("dictionary.txt"))?)
            } else {
                None
            };
            let report: NodeReport = serde_json::from_str(&read(&nd.join("report.json"))?)?;
            let folds: Vec<FoldLog> = serde_json::from_str(&read(&nd.join("folds.json"))?)?;
            let dataset_manifest = read(&nd.join("dataset.tsv"))?;
            node_models.insert(
                id.clone(),
                NodeModel {
                    node_id: id.clone(),
                    mode,
                    dictionary,
                    network,
                    report,
                    folds,
                    dataset_manifest,
                },
            );
        }
        Ok(HierarchicalModel {
            taxonomy,
            mode,
            tokenizer,
            node_models,
            embedder,
            failures: entry.failures.clone(),
            seed: entry.seed,
            config: entry.config.clone(),
            run_config: entry.run_config.clone(),
        })
    }
}

/// Per-node metric table: CV, training and test accuracy plus macro precision, recall and F1.
pub fn report_table<T>(model: &HierarchicalModel<T>) -> String {
    let width = model
        .node_models
        .keys()
        .chain(model.failures.iter().map(|f| &f.node_id))
        .map(String::len)
        .max()
        .unwrap_or(4)
        .max(4);
    let mut out = format!(
        "Datasets_{}\n{:<width$}  {:>7}  {:>6}  {:>6}  {:>6}  {:>9}  {:>6}  {:>6}\n",
        model.mode.tag(),
        "node",
        "samples",
        "cv",
        "train",
        "test",
        "precision",
        "recall",
        "f1",
    );
    for node in model.taxonomy.non_leaf_nodes() {
        let id = model.taxonomy.id(node);
        if let Some(m) = model.node_models.get(id) {
            let r = &m.report;
            let _ = writeln!(
                out,
                "{id:<width$}  {:>7}  {:>6.4}  {:>6.4}  {:>6.4}  {:>9.4}  {:>6.4}  {:>6.4}",
                r.dataset_size,
                r.cv_accuracy,
                r.training_accuracy,
                r.test_accuracy,
                r.metrics.macro_precision,
                r.metrics.macro_recall,
                r.metrics.macro_f1,
            );
        } else if let Some(f) = model.failures.iter().find(|f| f.node_id == id) {
            let _ = writeln!(out, "{id:<width$}  FAILED: {}", f.message);
        }
    }
    out
}
