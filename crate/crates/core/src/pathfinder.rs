//! Threshold-gated descent through the per-node networks, path scoring and
//! hierarchical evaluation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::{NodeIdx, Taxonomy};
use crate::trainer::{document_features, HierarchicalModel};
use crate::textpipe::FeatureMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub threshold: f64,
    pub top_k_paths: usize,
    /// Children expanded when none clears the threshold.
    pub fallback_children: usize,
    /// Lets a fallback branch fall back once more before stopping.
    pub second_iteration: bool,
    /// Evaluation counts a hit when the leaf id matches, ignoring the rest of the path.
    pub leaf_only_match: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            threshold: 0.7,
            top_k_paths: 3,
            fallback_children: 2,
            second_iteration: true,
            leaf_only_match: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.top_k_paths == 0 {
            return Err(Error::InvalidArgument("top_k_paths must be at least 1".into()));
        }
        if self.fallback_children == 0 {
            return Err(Error::InvalidArgument("fallback_children must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationPath {
    /// Category ids from a root child downward.
    pub categories: Vec<String>,
    pub node_scores: Vec<f64>,
    pub total_score: f64,
    /// Reached through at least one fallback expansion.
    pub low_tolerance: bool,
}

impl ClassificationPath {
    pub fn label(&self) -> String {
        self.categories.join("/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub paths: Vec<ClassificationPath>,
    /// Nothing in the text maps to any feature.
    pub unclassifiable: bool,
}

/// Child probabilities of an expandable node, in taxonomy child order.
pub trait NodeScorer {
    fn child_probabilities(&self, taxonomy: &Taxonomy, node: NodeIdx) -> Result<Vec<f64>>;
}

/// Arithmetic mean of the node scores.
pub fn path_score(node_scores: &[f64]) -> Result<f64> {
    if node_scores.is_empty() {
        return Err(Error::InvalidArgument("path score of an empty path".into()));
    }
    Ok(node_scores.iter().sum::<f64>() / node_scores.len() as f64)
}

/// Score descending, then shorter path, then lexicographic category ids.
pub fn compare_paths(a: &ClassificationPath, b: &ClassificationPath) -> Ordering {
    b.total_score
        .partial_cmp(&a.total_score)
        .unwrap_or(Ordering::Equal)
        .then(a.categories.len().cmp(&b.categories.len()))
        .then_with(|| a.categories.cmp(&b.categories))
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    flagged: bool,
    /// Fallbacks this flagged branch may still take.
    extra: usize,
}

struct Walker<'a, S> {
    taxonomy: &'a Taxonomy,
    scorer: &'a S,
    cfg: &'a InferenceConfig,
    out: Vec<ClassificationPath>,
}

impl<S: NodeScorer> Walker<'_, S> {
    fn emit(&mut self, cats: &[String], scores: &[f64], branch: Branch) -> Result<()> {
        if cats.is_empty() {
            return Ok(());
        }
        self.out.push(ClassificationPath {
            categories: cats.to_vec(),
            node_scores: scores.to_vec(),
            total_score: path_score(scores)?,
            low_tolerance: branch.flagged,
        });
        Ok(())
    }

    fn walk(&mut self, node: NodeIdx, cats: &mut Vec<String>, scores: &mut Vec<f64>, branch: Branch) -> Result<()> {
        let t = self.taxonomy;
        let children = t.children(node);
        match children.len() {
            0 => return self.emit(cats, scores, branch),
            1 => return self.step(children[0], 1.0, cats, scores, branch),
            _ => {}
        }
        let probs = self.scorer.child_probabilities(t, node)?;
        if probs.len() != children.len() {
            return Err(Error::DimMismatch {
                expected: children.len(),
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::NonFinite);
        }
        let qualified: Vec<usize> = (0..children.len())
            .filter(|&i| probs[i] >= self.cfg.threshold)
            .collect();
        if !qualified.is_empty() {
            for i in qualified {
                self.step(children[i], probs[i], cats, scores, branch)?;
            }
            return Ok(());
        }
        let next = if !branch.flagged {
            Some(Branch {
                flagged: true,
                extra: usize::from(self.cfg.second_iteration),
            })
        } else if branch.extra > 0 {
            Some(Branch {
                flagged: true,
                extra: branch.extra - 1,
            })
        } else {
            None
        };
        match next {
            None => self.emit(cats, scores, branch),
            Some(b) => {
                let mut order: Vec<usize> = (0..children.len()).collect();
                order.sort_by(|&x, &y| probs[y].partial_cmp(&probs[x]).unwrap_or(Ordering::Equal).then(x.cmp(&y)));
                for &i in order.iter().take(self.cfg.fallback_children) {
                    self.step(children[i], probs[i], cats, scores, b)?;
                }
                Ok(())
            }
        }
    }

    fn step(&mut self, child: NodeIdx, p: f64, cats: &mut Vec<String>, scores: &mut Vec<f64>, branch: Branch) -> Result<()> {
        cats.push(self.taxonomy.id(child).to_string());
        scores.push(p);
        let r = self.walk(child, cats, scores, branch);
        cats.pop();
        scores.pop();
        r
    }
}

/// Every terminated path of the descent, sorted by [`compare_paths`] and not truncated.
pub fn descend<S: NodeScorer>(taxonomy: &Taxonomy, scorer: &S, cfg: &InferenceConfig) -> Result<Vec<ClassificationPath>> {
    cfg.validate()?;
    let mut w = Walker {
        taxonomy,
        scorer,
        cfg,
        out: Vec::new(),
    };
    w.walk(
        taxonomy.root(),
        &mut Vec::new(),
        &mut Vec::new(),
        Branch {
            flagged: false,
            extra: 0,
        },
    )?;
    let mut paths = w.out;
    paths.sort_by(compare_paths);
    Ok(paths)
}

/// Scores nodes of a trained model for one document. The embedding vector
/// is inferred once and shared by every node.
pub struct ModelScorer<'a, T> {
    model: &'a HierarchicalModel<T>,
    tokens: Vec<String>,
    doc_vector: Option<Vec<T>>,
    unclassifiable: bool,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a HierarchicalModel<T>, text: &str) -> Result<Self> {
        let tokens = model.tokenizer.tokenize(text);
        let mode = model.mode;
        let mut no_embedding = true;
        let doc_vector = if mode.uses_embedding() {
            let emb = model
                .embedder
                .as_ref()
                .ok_or_else(|| Error::Bundle(format!("{mode} model has no embedder")))?;
            let v = emb.infer_vector(&tokens, emb.params.infer_steps)?;
            no_embedding = v.no_known_tokens;
            Some(v.values)
        } else {
            None
        };
        let no_bow = !mode.uses_bow()
            || !model.node_models.values().any(|m| {
                m.dictionary
                    .as_ref()
                    .is_some_and(|d| tokens.iter().any(|t| d.position(t).is_some()))
            });
        let unclassifiable = no_bow && (!mode.uses_embedding() || no_embedding);
        Ok(ModelScorer {
            model,
            tokens,
            doc_vector,
            unclassifiable,
        })
    }

    pub fn is_unclassifiable(&self) -> bool {
        self.unclassifiable
    }
}

impl<T: Scalar> NodeScorer for ModelScorer<'_, T> {
    fn child_probabilities(&self, taxonomy: &Taxonomy, node: NodeIdx) -> Result<Vec<f64>> {
        let id = taxonomy.id(node);
        let m = self
            .model
            .node_models
            .get(id)
            .ok_or_else(|| Error::Bundle(format!("no network for node `{id}`")))?;
        let x = document_features(
            self.model.mode,
            &self.tokens,
            m.dictionary.as_ref(),
            self.doc_vector.as_deref(),
        )?;
        Ok(m.network.forward(&x)?.into_iter().map(|p| p.to_f64_exact()).collect())
    }
}

/// Ranked paths for `text`, truncated to `cfg.top_k_paths`.
pub fn classify<T: Scalar>(model: &HierarchicalModel<T>, text: &str, cfg: &InferenceConfig) -> Result<Classification> {
    cfg.validate()?;
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument("cannot classify empty text".into()));
    }
    let scorer = ModelScorer::new(model, text)?;
    if scorer.is_unclassifiable() {
        return Ok(Classification {
            paths: Vec::new(),
            unclassifiable: true,
        });
    }
    let mut paths = descend(&model.taxonomy, &scorer, cfg)?;
    paths.truncate(cfg.top_k_paths);
    Ok(Classification {
        paths,
        unclassifiable: false,
    })
}

/// `Label = a/b/ Score = 0.68` lines.
pub fn format_human(c: &Classification) -> String {
    if c.unclassifiable {
        return "UNCLASSIFIABLE\n".to_string();
    }
    let mut out = String::new();
    for p in &c.paths {
        let _ = writeln!(out, "Label = {}/ Score = {:.2}", p.label(), p.total_score);
    }
    out
}

/// `rank<TAB>path<TAB>total_score<TAB>node_scores_csv` lines with 4-decimal scores.
pub fn format_machine(c: &Classification) -> String {
    if c.unclassifiable {
        return "UNCLASSIFIABLE\n".to_string();
    }
    let mut out = String::new();
    for (rank, p) in c.paths.iter().enumerate() {
        let scores: Vec<String> = p.node_scores.iter().map(|s| format!("{s:.4}")).collect();
        let _ = writeln!(out, "{}\t{}\t{:.4}\t{}", rank + 1, p.label(), p.total_score, scores.join(","));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentOutcome {
    pub doc_id: String,
    pub true_path: String,
    pub predicted: Vec<String>,
    pub scores: Vec<f64>,
    pub correct: bool,
    pub true_level1: String,
    /// Root child of the top-1 path; `None` when nothing was returned.
    pub predicted_level1: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalEvaluation {
    pub mode: FeatureMode,
    pub top_k: usize,
    pub total: usize,
    pub correct: usize,
    pub top_k_accuracy: f64,
    /// Root children, in taxonomy order.
    pub level1_labels: Vec<String>,
    /// `[true][predicted]`; the extra last column counts documents with no path.
    pub level1_confusion: Vec<Vec<usize>>,
    pub documents: Vec<DocumentOutcome>,
}

/// Classifies every document of `corpus` and scores the top-k paths against its leaf.
pub fn evaluate_hierarchical<T: Scalar>(
    model: &HierarchicalModel<T>,
    corpus: &Corpus,
    cfg: &InferenceConfig,
) -> Result<HierarchicalEvaluation> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let t = &model.taxonomy;
    let level1: Vec<String> = t.children(t.root()).iter().map(|&c| t.id(c).to_string()).collect();
    let documents: Vec<DocumentOutcome> = corpus
        .documents()
        .par_iter()
        .map(|d| {
            let leaf = t.get(&d.leaf_id)?;
            let true_cats = t.category_path(leaf);
            let result = classify(model, &d.text, cfg)?;
            let correct = result.paths.iter().any(|p| {
                if cfg.leaf_only_match {
                    p.categories.last() == true_cats.last()
                } else {
                    p.categories == true_cats
                }
            });
            Ok(DocumentOutcome {
                doc_id: d.doc_id.clone(),
                true_path: true_cats.join("/"),
                predicted: result.paths.iter().map(ClassificationPath::label).collect(),
                scores: result.paths.iter().map(|p| p.total_score).collect(),
                correct,
                true_level1: true_cats[0].clone(),
                predicted_level1: result.paths.first().map(|p| p.categories[0].clone()),
            })
        })
        .collect::<Result<_>>()?;

    let n = level1.len();
    let mut confusion = vec![vec![0usize; n + 1]; n];
    for d in &documents {
        let row = level1.iter().position(|l| *l == d.true_level1).expect("root child");
        let col = d
            .predicted_level1
            .as_ref()
            .and_then(|p| level1.iter().position(|l| l == p))
            .unwrap_or(n);
        confusion[row][col] += 1;
    }
    let correct = documents.iter().filter(|d| d.correct).count();
    Ok(HierarchicalEvaluation {
        mode: model.mode,
        top_k: cfg.top_k_paths,
        total: documents.len(),
        correct,
        top_k_accuracy: correct as f64 / documents.len() as f64,
        level1_labels: level1,
        level1_confusion: confusion,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[derive(Debug, Clone)]
    struct Table(HashMap<String, Vec<f64>>);

    impl NodeScorer for Table {
        fn child_probabilities(&self, t: &Taxonomy, node: NodeIdx) -> Result<Vec<f64>> {
            Ok(self.0[t.id(node)].clone())
        }
    }

    fn table(entries: &[(&str, &[f64])]) -> Table {
        Table(entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect())
    }

    fn tree() -> Taxonomy {
        Taxonomy::parse("root|R\n  a|A\n    a1|A1\n    a2|A2\n  b|B\n    b1|B1\n    b2|B2\n").unwrap()
    }

    #[test]
    fn path_score_is_mean() {
        assert!((path_score(&[0.9, 0.7, 0.5]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(path_score(&[0.42]).unwrap(), 0.42);
        assert!(path_score(&[]).is_err());
    }

    #[test]
    fn single_confident_path() {
        let s = table(&[("root", &[0.9, 0.1]), ("a", &[0.8, 0.2]), ("b", &[0.5, 0.5])]);
        let paths = descend(&tree(), &s, &InferenceConfig::default()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].categories, ["a", "a1"]);
        assert!((paths[0].total_score - 0.85).abs() < 1e-12);
        assert!(!paths[0].low_tolerance);
    }

    #[test]
    fn fallback_expands_top_two() {
        let s = table(&[("root", &[0.6, 0.4]), ("a", &[0.9, 0.1]), ("b", &[0.55, 0.45])]);
        let cfg = InferenceConfig {
            second_iteration: false,
            ..InferenceConfig::default()
        };
        let paths = descend(&tree(), &s, &cfg).unwrap();
        let labels: Vec<String> = paths.iter().map(ClassificationPath::label).collect();
        // b stalls with its one fallback spent, so the path stops at b.
        assert_eq!(labels, ["a/a1", "b"]);
        assert!(paths.iter().all(|p| p.low_tolerance));

        let paths = descend(&tree(), &s, &InferenceConfig::default()).unwrap();
        let labels: Vec<String> = paths.iter().map(ClassificationPath::label).collect();
        assert_eq!(labels, ["a/a1", "b/b1", "b/b2"]);
    }

    #[test]
    fn single_child_passes_through() {
        let t = Taxonomy::parse("root|R\n  a|A\n    only|O\n      x|X\n      y|Y\n  b|B\n").unwrap();
        let s = table(&[("root", &[0.8, 0.2]), ("only", &[0.1, 0.9])]);
        let paths = descend(&t, &s, &InferenceConfig::default()).unwrap();
        assert_eq!(paths[0].categories, ["a", "only", "y"]);
        assert_eq!(paths[0].node_scores, [0.8, 1.0, 0.9]);
    }

    #[test]
    fn ties_prefer_shorter_then_lexicographic() {
        let mk = |c: &[&str], s: f64| ClassificationPath {
            categories: c.iter().map(|x| x.to_string()).collect(),
            node_scores: vec![s; c.len()],
            total_score: s,
            low_tolerance: false,
        };
        let mut v = vec![mk(&["b", "x"], 0.5), mk(&["c"], 0.5), mk(&["a", "y"], 0.5), mk(&["z"], 0.6)];
        v.sort_by(compare_paths);
        let labels: Vec<String> = v.iter().map(ClassificationPath::label).collect();
        assert_eq!(labels, ["z", "c", "a/y", "b/x"]);
    }

    #[test]
    fn config_validation() {
        let bad = [
            InferenceConfig { threshold: 0.0, ..Default::default() },
            InferenceConfig { threshold: 1.5, ..Default::default() },
            InferenceConfig { top_k_paths: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn output_formats() {
        let c = Classification {
            paths: vec![ClassificationPath {
                categories: vec!["science".into(), "geology".into()],
                node_scores: vec![0.4, 0.66],
                total_score: 0.53,
                low_tolerance: true,
            }],
            unclassifiable: false,
        };
        assert_eq!(format_human(&c), "Label = science/geology/ Score = 0.53\n");
        assert_eq!(format_machine(&c), "1\tscience/geology\t0.5300\t0.4000,0.6600\n");
        let u = Classification { paths: vec![], unclassifiable: true };
        assert_eq!(format_human(&u), "UNCLASSIFIABLE\n");
    }

    /// Random probability tables over a random taxonomy of depth ≤ 3.
    fn random_case() -> impl Strategy<Value = (Taxonomy, Table)> {
        (proptest::collection::vec(0usize..4, 1..4), any::<u64>()).prop_map(|(shape, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut text = String::from("root|R\n");
            let mut probs = HashMap::new();
            let mut root_kids = 0;
            for (i, &grand) in shape.iter().enumerate() {
                text.push_str(&format!("  c{i}|C\n"));
                root_kids += 1;
                for j in 0..grand {
                    text.push_str(&format!("    c{i}g{j}|G\n"));
                }
                if grand >= 2 {
                    probs.insert(format!("c{i}"), dirichlet(&mut rng, grand));
                }
            }
            if root_kids < 2 {
                text.push_str("  extra|E\n");
                root_kids += 1;
            }
            probs.insert("root".to_string(), dirichlet(&mut rng, root_kids));
            fn dirichlet<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            }
            (Taxonomy::parse(&text).unwrap(), Table(probs))
        })
    }

    /// Nodes reachable from the root through qualifying children only.
    fn qualified_subtree(t: &Taxonomy, s: &Table, threshold: f64) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![t.root()];
        while let Some(n) = stack.pop() {
            let kids = t.children(n);
            let chosen: Vec<NodeIdx> = match kids.len() {
                0 => vec![],
                1 => kids.to_vec(),
                _ => {
                    let p = s.child_probabilities(t, n).unwrap();
                    kids.iter().zip(p).filter(|(_, p)| *p >= threshold).map(|(&k, _)| k).collect()
                }
            };
            for k in chosen {
                out.push(t.id(k).to_string());
                stack.push(k);
            }
        }
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn returned_paths_are_valid_chains((t, s) in random_case(), threshold in 0.05f64..1.0) {
            let cfg = InferenceConfig { threshold, ..Default::default() };
            let paths = descend(&t, &s, &cfg).unwrap();
            prop_assert!(!paths.is_empty());
            for w in paths.windows(2) {
                prop_assert_ne!(compare_paths(&w[0], &w[1]), Ordering::Greater);
            }
            for p in &paths {
                prop_assert_eq!(p.categories.len(), p.node_scores.len());
                let mean = p.node_scores.iter().sum::<f64>() / p.node_scores.len() as f64;
                prop_assert!((p.total_score - mean).abs() <= 1e-12);
                let mut parent = t.root();
                for c in &p.categories {
                    let idx = t.get(c).unwrap();
                    prop_assert_eq!(t.parent(idx), Some(parent));
                    parent = idx;
                }
            }
        }

        #[test]
        fn raising_threshold_shrinks_qualified_subtree(
            (t, s) in random_case(),
            lo in 0.05f64..1.0,
            hi in 0.05f64..1.0,
        ) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let low = qualified_subtree(&t, &s, lo);
            for id in qualified_subtree(&t, &s, hi) {
                prop_assert!(low.contains(&id));
            }
        }
    }
}
