#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use taxoclass::metrics::EvalMetrics;
use taxoclass::mlp::{Layer, Network, NetworkSpec};
use taxoclass::pathfinder::{ClassificationPath, InferenceConfig};
use taxoclass::taxonomy::{load_taxonomy, NodeIdx, Taxonomy};
use taxoclass::textpipe::{Dictionary, FeatureMode, Tokenizer};
use taxoclass::trainer::{HierarchicalModel, NodeModel, NodeReport, TrainConfig};

pub const PROBE: &str = "probe";

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_taxonomy() -> Taxonomy {
    load_taxonomy(fixture_path("taxonomy.txt")).unwrap()
}

/// Fresh scratch directory under the cargo test tmp dir.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn run_cli(args: &[&str], stdin: &str) -> (i32, String, String) {
    let args: Vec<String> = std::iter::once("taxoclass").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = taxoclass::cli::run(&args, &mut stdin.as_bytes(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Writes one verdict line straight to stderr so it shows even under output capture.
pub fn verdict(criterion: u32, name: &str, ok: bool, detail: &str) {
    use std::io::Write;
    let line = format!(
        "acceptance {criterion:>2} {}: {name}: {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion} failed: {detail}");
}

/// Node network that maps the single term `probe` to the given child
/// probabilities: one hidden unit with weight 1, output weights `ln p`.
pub fn probe_network(probs: &[f64]) -> Network<f64> {
    let spec = NetworkSpec::new(1, vec![1], probs.len(), 0);
    let hidden = Layer {
        inputs: 1,
        outputs: 1,
        weights: vec![1.0],
        biases: vec![0.0],
    };
    let out = Layer {
        inputs: 1,
        outputs: probs.len(),
        weights: probs.iter().map(|p| p.ln()).collect(),
        biases: vec![0.0; probs.len()],
    };
    Network::from_layers(spec, vec![hidden, out]).unwrap()
}

/// BOW model whose every expandable node answers the document `probe` with
/// `table[node]`; nodes missing from the table are uniform.
pub fn canned_model(taxonomy: &Taxonomy, table: &HashMap<String, Vec<f64>>) -> HierarchicalModel<f64> {
    let mut node_models = BTreeMap::new();
    for n in taxonomy.non_leaf_nodes() {
        let k = taxonomy.children(n).len();
        if k < 2 {
            continue;
        }
        let id = taxonomy.id(n).to_string();
        let probs = table.get(&id).cloned().unwrap_or_else(|| vec![1.0 / k as f64; k]);
        assert_eq!(probs.len(), k, "{id}");
        let classes: Vec<String> = taxonomy.children(n).iter().map(|&c| taxonomy.id(c).to_string()).collect();
        let labels: Vec<usize> = (0..k).collect();
        let report = NodeReport {
            node_id: id.clone(),
            mode: FeatureMode::Bow,
            classes,
            dataset_size: 0,
            training_size: 0,
            validation_size: 0,
            cv_accuracy: 1.0,
            training_accuracy: 1.0,
            test_accuracy: 1.0,
            metrics: EvalMetrics::from_predictions(&labels, &labels, k).unwrap(),
            epoch_losses: Vec::new(),
            warnings: Vec::new(),
        };
        node_models.insert(
            id.clone(),
            NodeModel {
                node_id: id.clone(),
                mode: FeatureMode::Bow,
                dictionary: Some(Dictionary::from_terms(id.clone(), vec![PROBE.to_string()]).unwrap()),
                network: probe_network(&probs),
                report,
                folds: Vec::new(),
                dataset_manifest: String::new(),
            },
        );
    }
    HierarchicalModel {
        taxonomy: taxonomy.clone(),
        mode: FeatureMode::Bow,
        tokenizer: Tokenizer::default(),
        node_models,
        embedder: None,
        failures: Vec::new(),
        seed: 0,
        config: TrainConfig::default(),
        run_config: None,
    }
}

/// Every root-to-node chain of the tree.
fn all_chains(t: &Taxonomy) -> Vec<Vec<NodeIdx>> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<NodeIdx>> = t.children(t.root()).iter().map(|&c| vec![c]).collect();
    while let Some(chain) = stack.pop() {
        for &c in t.children(*chain.last().unwrap()) {
            let mut next = chain.clone();
            next.push(c);
            stack.push(next);
        }
        out.push(chain);
    }
    out
}

fn parent_of(t: &Taxonomy, chain: &[NodeIdx], i: usize) -> NodeIdx {
    if i == 0 {
        t.root()
    } else {
        chain[i - 1]
    }
}

/// Oracle: filters all chains by the expansion rule stated per step, scores
/// by the mean and sorts by score, then length, then ids.
pub fn enumerate_paths(
    t: &Taxonomy,
    table: &HashMap<String, Vec<f64>>,
    cfg: &InferenceConfig,
) -> Vec<ClassificationPath> {
    let max_fallbacks = 1 + usize::from(cfg.second_iteration);
    let probs = |node: NodeIdx| -> Vec<f64> {
        let k = t.children(node).len();
        table
            .get(t.id(node))
            .cloned()
            .unwrap_or_else(|| vec![1.0 / k as f64; k])
    };
    let top = |p: &[f64], i: usize| -> bool {
        // rank of child i by probability, ties to the lower index
        let better = (0..p.len()).filter(|&j| p[j] > p[i] || (p[j] == p[i] && j < i)).count();
        better < cfg.fallback_children
    };
    let mut found = Vec::new();
    'chain: for chain in all_chains(t) {
        let mut used = 0;
        let mut scores = Vec::new();
        for i in 0..chain.len() {
            let parent = parent_of(t, &chain, i);
            let siblings = t.children(parent);
            let pos = siblings.iter().position(|&s| s == chain[i]).unwrap();
            if siblings.len() == 1 {
                scores.push(1.0);
                continue;
            }
            let p = probs(parent);
            if p[pos] >= cfg.threshold {
                scores.push(p[pos]);
            } else if p.iter().all(|&q| q < cfg.threshold) && used < max_fallbacks && top(&p, pos) {
                used += 1;
                scores.push(p[pos]);
            } else {
                continue 'chain;
            }
        }
        let end = *chain.last().unwrap();
        let kids = t.children(end).len();
        let terminal = match kids {
            0 => true,
            1 => false,
            _ => probs(end).iter().all(|&q| q < cfg.threshold) && used == max_fallbacks,
        };
        if terminal {
            let total = scores.iter().sum::<f64>() / scores.len() as f64;
            found.push(ClassificationPath {
                categories: chain.iter().map(|&n| t.id(n).to_string()).collect(),
                node_scores: scores,
                total_score: total,
                low_tolerance: used > 0,
            });
        }
    }
    found.sort_by(|a, b| {
        b.total_score
            .partial_cmp(&a.total_score)
            .unwrap()
            .then(a.categories.len().cmp(&b.categories.len()))
            .then_with(|| a.categories.cmp(&b.categories))
    });
    found
}
