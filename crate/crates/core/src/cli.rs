//! Command-line front end. [`run`] takes explicit streams so it can be driven
//! in-process; the binary only forwards `std::env::args`.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 training failure.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{apply_split_manifest, ingest, split_ab, split_manifest, Corpus, AB_RATIO};
use crate::embedding::{train_embedder, EmbedderModel, EmbedderParams};
use crate::error::{Error, Result};
use crate::graphbuilder::{embed_nodes, harvest, load_graph, weight_edges, EdgeMetric, HarvestPlan};
use crate::pathfinder::{
    classify, evaluate_hierarchical, format_human, format_machine, HierarchicalEvaluation, InferenceConfig,
};
use crate::synthetic::{write_synthetic, SyntheticSpec};
use crate::taxonomy::load_taxonomy;
use crate::textpipe::{FeatureMode, Tokenizer};
use crate::trainer::{derive_seed, train_hierarchy, HierarchicalModel, NodeReport, TrainConfig};

pub const CONFIG_ENV: &str = "TAXOCLASS_CONFIG";
pub const SPLIT_FILE: &str = "split.tsv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub taxonomy: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    /// Document store with `<doc_id>.txt` files.
    pub docs: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub metric: EdgeMetric,
    pub quota: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            metric: EdgeMetric::OneMinusCos,
            quota: 500,
        }
    }
}

/// Every knob of a run. Read from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: FeatureMode,
    pub jobs: usize,
    pub paths: PathsConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub graph: GraphConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            mode: FeatureMode::Bow,
            jobs: 1,
            paths: PathsConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            graph: GraphConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Parser)]
#[command(name = "taxoclass", version, about = "Hierarchical text classification over a topic taxonomy")]
struct Cli {
    /// TOML config file; defaults to $TAXOCLASS_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Human,
    Machine,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect documents from a category-graph snapshot into a taxonomy-mirrored corpus.
    BuildCorpus {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `leaf<TAB>quota[<TAB>nodes]` lines; defaults to match hints with --quota.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        quota: Option<usize>,
        /// Document store; defaults to `docs/` beside the snapshot.
        #[arg(long)]
        docs: Option<PathBuf>,
        /// Embedder used for node vectors; trained on node texts when absent.
        #[arg(long, conflicts_with = "node_vectors")]
        embedder: Option<PathBuf>,
        /// Precomputed `node_id<TAB>values` rows.
        #[arg(long)]
        node_vectors: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
    /// Write a synthetic taxonomy and corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        docs_per_leaf: Option<usize>,
    },
    /// Train one feature mode into a model bundle.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        mode: Option<FeatureMode>,
        /// Existing `doc_id<TAB>A|B` manifest.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Print ranked category paths for a document.
    Classify {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        mode: Option<FeatureMode>,
        /// Text file; stdin when absent.
        input: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value = "human")]
        format: OutputFormat,
    },
    /// Top-k evaluation on the B split, optionally comparing two models.
    Evaluate {
        /// Bundle directory; repeat to compare two bundles.
        #[arg(long = "model", num_args = 1)]
        models: Vec<PathBuf>,
        /// Feature mode; repeat to compare two modes.
        #[arg(long = "mode", num_args = 1)]
        modes: Vec<FeatureMode>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(short, long)]
        k: Option<usize>,
        /// Count a hit on matching leaf id alone.
        #[arg(long)]
        leaf_only: bool,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the per-document log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: OutputFormat,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    OneMinusCos,
    Arccos,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Diverged { .. } | Error::SingleClass(_) => EXIT_TRAINING,
            Error::Node { source, .. } if matches!(**source, Error::Diverged { .. } | Error::SingleClass(_)) => {
                EXIT_TRAINING
            }
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<i32, Failure>;

fn io_err(e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

/// Runs the command line `args` (including the program name).
pub fn run(args: &[String], stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("config file {} not found", p.display())));
            }
            RunConfig::load(&p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.train.jobs = cfg.jobs;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> std::result::Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| usage(format!("missing --{name} (or paths.{name} in the config)")))
}

fn existing(path: PathBuf, what: &str) -> std::result::Result<PathBuf, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn tokenizer(cfg: &RunConfig) -> Result<Tokenizer> {
    match &cfg.paths.stoplist {
        Some(p) => Tokenizer::from_stoplist_file(p),
        None => Ok(Tokenizer::default()),
    }
}

fn dispatch(cli: Cli, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::BuildCorpus {
            snapshot,
            taxonomy,
            out,
            plan,
            quota,
            docs,
            embedder,
            node_vectors,
            metric,
        } => {
            let snapshot = existing(required(snapshot, &cfg.paths.snapshot, "snapshot")?, "snapshot")?;
            let taxonomy = existing(required(taxonomy, &cfg.paths.taxonomy, "taxonomy")?, "taxonomy")?;
            let docs = docs
                .or_else(|| cfg.paths.docs.clone())
                .unwrap_or_else(|| snapshot.parent().unwrap_or(Path::new(".")).join("docs"));
            let metric = match metric {
                Some(MetricArg::OneMinusCos) => EdgeMetric::OneMinusCos,
                Some(MetricArg::Arccos) => EdgeMetric::Arccos,
                None => cfg.graph.metric,
            };
            cmd_build_corpus(
                &cfg,
                &BuildCorpusArgs {
                    snapshot,
                    taxonomy,
                    out,
                    plan,
                    quota: quota.unwrap_or(cfg.graph.quota),
                    docs,
                    embedder,
                    node_vectors,
                    metric,
                },
                stdout,
                stderr,
            )
        }
        Command::Synth { out, docs_per_leaf } => {
            let mut spec = cfg.synthetic.clone();
            if let Some(n) = docs_per_leaf {
                spec.docs_per_leaf = n;
            }
            let (t, c) = write_synthetic(&spec, &out)?;
            writeln!(stdout, "wrote {} documents over {} leaves to {}", c.len(), t.leaves().len(), out.display())
                .map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Train {
            corpus,
            taxonomy,
            model,
            mode,
            split,
        } => {
            let corpus = existing(required(corpus, &cfg.paths.corpus, "corpus")?, "corpus")?;
            let taxonomy = existing(required(taxonomy, &cfg.paths.taxonomy, "taxonomy")?, "taxonomy")?;
            let model = required(model, &cfg.paths.model, "model")?;
            let mut cfg = cfg;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cmd_train(&cfg, &corpus, &taxonomy, &model, split.as_deref(), stdout, stderr)
        }
        Command::Classify {
            model,
            mode,
            input,
            k,
            threshold,
            format,
        } => {
            let model = existing(required(model, &cfg.paths.model, "model")?, "model")?;
            let text = match input {
                Some(p) => std::fs::read_to_string(existing(p, "input")?).map_err(io_err)?,
                None => {
                    let mut s = String::new();
                    stdin.read_to_string(&mut s).map_err(io_err)?;
                    s
                }
            };
            if text.trim().is_empty() {
                return Err(usage("no input text"));
            }
            let mut inference = cfg.inference.clone();
            if let Some(k) = k {
                inference.top_k_paths = k;
            }
            if let Some(t) = threshold {
                inference.threshold = t;
            }
            inference.validate().map_err(|e| usage(e.to_string()))?;
            let m = HierarchicalModel::<f64>::load(&model, mode.unwrap_or(cfg.mode))?;
            let c = classify(&m, &text, &inference)?;
            let out = match format {
                OutputFormat::Human => format_human(&c),
                OutputFormat::Machine => format_machine(&c),
                OutputFormat::Json => serde_json::to_string_pretty(&c).map_err(Error::from)? + "\n",
            };
            stdout.write_all(out.as_bytes()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            models,
            modes,
            corpus,
            taxonomy,
            k,
            leaf_only,
            json,
            log,
            format,
        } => {
            let corpus = existing(required(corpus, &cfg.paths.corpus, "corpus")?, "corpus")?;
            let models = if models.is_empty() {
                vec![required(None, &cfg.paths.model, "model")?]
            } else {
                models
            };
            let modes = if modes.is_empty() { vec![cfg.mode] } else { modes };
            let pairs: Vec<(PathBuf, FeatureMode)> = match (models.len(), modes.len()) {
                (1, n) if n <= 2 => modes.iter().map(|&m| (models[0].clone(), m)).collect(),
                (2, 1) => models.iter().map(|p| (p.clone(), modes[0])).collect(),
                (2, 2) => models.into_iter().zip(modes).collect(),
                _ => return Err(usage("evaluate compares at most two models")),
            };
            let mut inference = cfg.inference.clone();
            if let Some(k) = k {
                inference.top_k_paths = k;
            }
            inference.leaf_only_match |= leaf_only;
            inference.validate().map_err(|e| usage(e.to_string()))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.jobs)
                .build()
                .map_err(|e| usage(e.to_string()))?;
            let report = pool.install(|| cmd_evaluate(&pairs, &corpus, taxonomy.as_deref(), &inference))?;
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(io_err)?;
            }
            if let Some(p) = log {
                std::fs::write(&p, report.document_log()).map_err(io_err)?;
            }
            let out = match format {
                OutputFormat::Json => serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
                _ => report.to_table(),
            };
            stdout.write_all(out.as_bytes()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
    }
}

pub struct BuildCorpusArgs {
    pub snapshot: PathBuf,
    pub taxonomy: PathBuf,
    pub out: PathBuf,
    pub plan: Option<PathBuf>,
    pub quota: usize,
    pub docs: PathBuf,
    pub embedder: Option<PathBuf>,
    pub node_vectors: Option<PathBuf>,
    pub metric: EdgeMetric,
}

fn cmd_build_corpus(cfg: &RunConfig, a: &BuildCorpusArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let t = load_taxonomy(&a.taxonomy)?;
    let mut g = load_graph(&a.snapshot)?;
    writeln!(stdout, "graph: {} nodes, {} edges", g.node_count(), g.edge_count()).map_err(io_err)?;
    let tok = tokenizer(cfg)?;

    if let Some(p) = &a.node_vectors {
        let imported = EmbedderModel::<f64>::import_doc_vectors(
            &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        )?;
        for id in imported.doc_ids() {
            let v = imported.trained_vector(id).expect("listed id").to_vec();
            g.set_vector(id, v)?;
        }
    } else {
        let model: EmbedderModel<f64> = match &a.embedder {
            Some(p) => EmbedderModel::load(p)?,
            None => {
                let texts: Vec<(String, Vec<String>)> = g
                    .nodes()
                    .iter()
                    .map(|n| {
                        let text = format!("{} {}", n.name, n.description.as_deref().unwrap_or(""));
                        (n.id.clone(), tok.tokenize(&text))
                    })
                    .collect();
                let params = EmbedderParams {
                    min_count: 1,
                    seed: derive_seed(cfg.seed, "graph_embedder"),
                    ..cfg.train.embedder.clone()
                };
                train_embedder(&texts, &params)?
            }
        };
        let flagged = embed_nodes(&mut g, &model, &tok)?;
        for id in flagged {
            writeln!(stderr, "warning: node `{id}` has no known words; zero vector").map_err(io_err)?;
        }
    }
    weight_edges(&mut g, a.metric)?;

    let plan = match &a.plan {
        Some(p) => HarvestPlan::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?, &t)?,
        None => {
            if a.quota == 0 {
                return Err(usage("quota must be at least 1"));
            }
            HarvestPlan::from_taxonomy(&t, a.quota)
        }
    };
    let report = harvest(&g, &t, &plan, &a.docs, &a.out)?;
    let total: usize = report.collected.values().map(Vec::len).sum();
    writeln!(stdout, "collected {total} documents for {} leaves into {}", report.collected.len(), a.out.display())
        .map_err(io_err)?;
    if report.shortfalls.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(stderr, "shortfall (leaf, quota, collected):").map_err(io_err)?;
        stderr.write_all(report.shortfall_text().as_bytes()).map_err(io_err)?;
        Ok(EXIT_DATA)
    }
}

fn cmd_train(
    cfg: &RunConfig,
    corpus_dir: &Path,
    taxonomy: &Path,
    model_dir: &Path,
    split: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let t = load_taxonomy(taxonomy)?;
    let ingested = ingest(corpus_dir, &t)?;
    for w in &ingested.warnings {
        writeln!(stderr, "warning: {w}").map_err(io_err)?;
    }
    let existing_split = model_dir.join(SPLIT_FILE);
    let split_path = split.map(Path::to_path_buf).or_else(|| existing_split.is_file().then_some(existing_split));
    let (a, b) = match split_path {
        Some(p) => apply_split_manifest(&ingested.corpus, &std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?,
        None => split_ab(&ingested.corpus, AB_RATIO, derive_seed(cfg.seed, "ab_split"))?,
    };
    std::fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    let manifest = model_dir.join(SPLIT_FILE);
    std::fs::write(&manifest, split_manifest(&a, &b)).map_err(|e| Error::io(&manifest, e))?;

    let tok = tokenizer(cfg)?;
    let mut model: HierarchicalModel<f64> = train_hierarchy(&a, &t, cfg.mode, &tok, &cfg.train, cfg.seed)?;
    model.run_config = Some(serde_json::to_value(cfg).map_err(Error::from)?);
    model.save(model_dir)?;
    stdout
        .write_all(crate::trainer::report_table(&model).as_bytes())
        .map_err(io_err)?;
    writeln!(
        stdout,
        "corpus A: {} documents, corpus B: {} documents",
        a.len(),
        b.len()
    )
    .map_err(io_err)?;
    for m in model.node_models.values() {
        for w in &m.report.warnings {
            writeln!(stderr, "warning: node `{}`: {w}", m.node_id).map_err(io_err)?;
        }
    }
    if model.failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        for f in &model.failures {
            writeln!(stderr, "node `{}` failed: {}", f.node_id, f.message).map_err(io_err)?;
        }
        Ok(EXIT_TRAINING)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub label: String,
    pub mode: FeatureMode,
    pub evaluation: HierarchicalEvaluation,
    pub node_reports: Vec<NodeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDelta {
    /// Second minus first.
    pub correct: i64,
    pub accuracy: f64,
    pub level1_confusion: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub corpus_b_size: usize,
    pub results: Vec<ModeResult>,
    pub delta: Option<ComparisonDelta>,
}

impl ComparisonReport {
    pub fn build(results: Vec<ModeResult>) -> Self {
        let delta = match results.as_slice() {
            [x, y] => Some(ComparisonDelta {
                correct: y.evaluation.correct as i64 - x.evaluation.correct as i64,
                accuracy: y.evaluation.top_k_accuracy - x.evaluation.top_k_accuracy,
                level1_confusion: x
                    .evaluation
                    .level1_confusion
                    .iter()
                    .zip(&y.evaluation.level1_confusion)
                    .map(|(rx, ry)| rx.iter().zip(ry).map(|(&a, &b)| b as i64 - a as i64).collect())
                    .collect(),
            }),
            _ => None,
        };
        ComparisonReport {
            corpus_b_size: results.first().map(|r| r.evaluation.total).unwrap_or(0),
            results,
            delta,
        }
    }

    /// `label<TAB>doc_id<TAB>true_path<TAB>correct<TAB>predicted paths`.
    pub fn document_log(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            for d in &r.evaluation.documents {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    r.label,
                    d.doc_id,
                    d.true_path,
                    u8::from(d.correct),
                    d.predicted.join(";")
                ));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let e = &r.evaluation;
            out.push_str(&format!(
                "{}: top-{} accuracy {:.4} ({}/{})\n",
                r.label, e.top_k, e.top_k_accuracy, e.correct, e.total
            ));
            out.push_str(&confusion_table(&e.level1_labels, &e.level1_confusion, |v| v.to_string()));
        }
        if let Some(d) = &self.delta {
            out.push_str(&format!(
                "delta ({} - {}): correct {:+}, accuracy {:+.4}\n",
                self.results[1].label, self.results[0].label, d.correct, d.accuracy
            ));
            out.push_str(&confusion_table(
                &self.results[0].evaluation.level1_labels,
                &d.level1_confusion,
                |v| format!("{v:+}"),
            ));
        }
        out
    }
}

fn confusion_table<V>(labels: &[String], m: &[Vec<V>], fmt: impl Fn(&V) -> String) -> String {
    let w = labels.iter().map(String::len).max().unwrap_or(0).max(12);
    let mut out = format!("{:<w$}", "");
    for i in 0..labels.len() {
        out.push_str(&format!(" {:>6}", format!("c{}", i + 1)));
    }
    out.push_str(&format!(" {:>6}\n", "none"));
    for (label, row) in labels.iter().zip(m) {
        out.push_str(&format!("{label:<w$}"));
        for v in row {
            out.push_str(&format!(" {:>6}", fmt(v)));
        }
        out.push('\n');
    }
    out
}

fn corpus_b(model_dir: &Path, corpus: &Corpus) -> Result<(String, Corpus)> {
    let p = model_dir.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let (_, b) = apply_split_manifest(corpus, &text)?;
    Ok((text, b))
}

/// Evaluates each `(bundle, mode)` on the B side of the bundle split. All
/// models must share the taxonomy and the split manifest.
pub fn cmd_evaluate(
    models: &[(PathBuf, FeatureMode)],
    corpus_dir: &Path,
    taxonomy: Option<&Path>,
    cfg: &InferenceConfig,
) -> Result<ComparisonReport> {
    let mut results = Vec::new();
    let mut reference: Option<(String, String)> = None;
    let mut corpus: Option<Corpus> = None;
    for (dir, mode) in models {
        let m = HierarchicalModel::<f64>::load(dir, *mode)?;
        if let Some(t) = taxonomy {
            if load_taxonomy(t)?.content_hash() != m.taxonomy.content_hash() {
                return Err(Error::Bundle(format!("{} was trained on a different taxonomy", dir.display())));
            }
        }
        let full = match &corpus {
            Some(c) => c.clone(),
            None => {
                let c = ingest(corpus_dir, &m.taxonomy)?.corpus;
                corpus = Some(c.clone());
                c
            }
        };
        let (split, b) = corpus_b(dir, &full)?;
        let key = (m.taxonomy.content_hash(), split);
        match &reference {
            None => reference = Some(key),
            Some(r) if *r != key => {
                return Err(Error::Bundle("models differ in taxonomy or corpus split".into()));
            }
            _ => {}
        }
        let evaluation = evaluate_hierarchical(&m, &b, cfg)?;
        let order: Vec<String> = m
            .taxonomy
            .non_leaf_nodes()
            .into_iter()
            .map(|n| m.taxonomy.id(n).to_string())
            .collect();
        let node_reports = order
            .iter()
            .filter_map(|id| m.node_models.get(id).map(|n| n.report.clone()))
            .collect();
        results.push(ModeResult {
            label: format!("{}:{}", dir.display(), mode.as_str()),
            mode: *mode,
            evaluation,
            node_reports,
        });
    }
    Ok(ComparisonReport::build(results))
}
