//! Topic taxonomy: the tree whose internal nodes each own a classifier.
//!
//! File format, one record per line:
//!
//! ```text
//! # comment
//! root|Root
//!   science|Science
//!     geology|Geology|match:exact:Geology
//!   sports|Sports|match:major:Sports match:exact:Ball_games
//! ```
//!
//! Depth is two spaces of indentation per level and the first record is the
//! root. Trailing `match:<exact|major>:<external-id>` fields may be given as
//! separate `|` fields or whitespace separated within one field.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a node inside its [`Taxonomy`].
pub type NodeIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchRelation {
    Exact,
    Major,
}

impl MatchRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchRelation::Exact => "exact",
            MatchRelation::Major => "major",
        }
    }
}

/// Link from a leaf to a node of the external category graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatchHint {
    pub relation: MatchRelation,
    pub external_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryNode {
    pub id: String,
    pub label: String,
    pub parent: Option<NodeIdx>,
    pub children: Vec<NodeIdx>,
    pub match_hints: Vec<MatchHint>,
}

impl CategoryNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Validated, immutable category tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: Vec<CategoryNode>,
    index: HashMap<String, NodeIdx>,
    depth: usize,
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Loads and validates a taxonomy file.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Taxonomy::parse(&text)
}

fn parse_hints(field: &str, lineno: usize, out: &mut Vec<MatchHint>) -> Result<()> {
    for token in field.split_whitespace() {
        let mut parts = token.splitn(3, ':');
        let (Some("match"), Some(rel), Some(ext)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("expected `match:<exact|major>:<id>`, got `{token}`"),
            ));
        };
        let relation = match rel {
            "exact" => MatchRelation::Exact,
            "major" => MatchRelation::Major,
            other => {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    format!("unknown match relation `{other}`"),
                ))
            }
        };
        if ext.is_empty() {
            return Err(Error::parse(format!("line {lineno}"), "empty external id"));
        }
        out.push(MatchHint {
            relation,
            external_id: ext.to_string(),
        });
    }
    Ok(())
}

impl Taxonomy {
    /// Parses and validates taxonomy text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes: Vec<CategoryNode> = Vec::new();
        let mut index: HashMap<String, NodeIdx> = HashMap::new();
        // stack[d] = node at depth d on the current branch
        let mut stack: Vec<NodeIdx> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let indent = line.len() - line.trim_start_matches(' ').len();
            if line[indent..].starts_with('\t') {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    "tabs are not allowed in indentation",
                ));
            }
            if indent % 2 != 0 {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    "indentation must be a multiple of two spaces",
                ));
            }
            let depth = indent / 2;
            let mut fields = line[indent..].split('|');
            let id = fields.next().unwrap_or("").trim().to_string();
            let label = fields
                .next()
                .ok_or_else(|| Error::parse(format!("line {lineno}"), "missing `|label`"))?
                .trim()
                .to_string();
            let mut match_hints = Vec::new();
            for f in fields {
                parse_hints(f, lineno, &mut match_hints)?;
            }
            if !is_valid_id(&id) {
                return Err(Error::InvalidId(id));
            }

            let parent = if nodes.is_empty() {
                if depth != 0 {
                    return Err(Error::Orphan(id));
                }
                None
            } else {
                if depth == 0 || depth > stack.len() {
                    return Err(Error::Orphan(id));
                }
                stack.truncate(depth);
                Some(stack[depth - 1])
            };

            if let Some(&existing) = index.get(&id) {
                // a node naming one of its own ancestors (or itself) as parent
                if stack.contains(&existing) {
                    return Err(Error::Cycle(id));
                }
                return Err(Error::DuplicateId(id));
            }

            let idx = nodes.len();
            nodes.push(CategoryNode {
                id: id.clone(),
                label,
                parent,
                children: Vec::new(),
                match_hints,
            });
            index.insert(id, idx);
            if let Some(p) = parent {
                nodes[p].children.push(idx);
            }
            stack.push(idx);
        }

        if nodes.is_empty() {
            return Err(Error::parse("input", "taxonomy has no records"));
        }
        for n in &nodes {
            if !n.is_leaf() && !n.match_hints.is_empty() {
                return Err(Error::HintsOnInternal(n.id.clone()));
            }
        }
        let mut t = Taxonomy {
            nodes,
            index,
            depth: 0,
        };
        t.depth = (0..t.nodes.len()).map(|i| t.level(i)).max().unwrap_or(0);
        Ok(t)
    }

    /// Serializes back into the file format; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for idx in self.preorder() {
            let n = &self.nodes[idx];
            for _ in 0..self.level(idx) {
                out.push_str("  ");
            }
            out.push_str(&n.id);
            out.push('|');
            out.push_str(&n.label);
            for h in &n.match_hints {
                out.push_str("|match:");
                out.push_str(h.relation.as_str());
                out.push(':');
                out.push_str(&h.external_id);
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn root(&self) -> NodeIdx {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Maximum number of edges on any root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node(&self, idx: NodeIdx) -> &CategoryNode {
        &self.nodes[idx]
    }

    pub fn id(&self, idx: NodeIdx) -> &str {
        &self.nodes[idx].id
    }

    pub fn find(&self, id: &str) -> Option<NodeIdx> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Result<NodeIdx> {
        self.find(id).ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn children(&self, idx: NodeIdx) -> &[NodeIdx] {
        &self.nodes[idx].children
    }

    pub fn parent(&self, idx: NodeIdx) -> Option<NodeIdx> {
        self.nodes[idx].parent
    }

    pub fn is_leaf(&self, idx: NodeIdx) -> bool {
        self.nodes[idx].is_leaf()
    }

    /// Number of edges between the root and `idx`.
    pub fn level(&self, idx: NodeIdx) -> usize {
        let mut level = 0;
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            level += 1;
            cur = p;
        }
        level
    }

    pub fn preorder(&self) -> Vec<NodeIdx> {
        self.preorder_from(self.root())
    }

    pub fn preorder_from(&self, start: NodeIdx) -> Vec<NodeIdx> {
        let mut out = Vec::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Leaves in pre-order (file order).
    pub fn leaves(&self) -> Vec<NodeIdx> {
        self.leaves_under(self.root())
    }

    pub fn leaves_under(&self, idx: NodeIdx) -> Vec<NodeIdx> {
        self.preorder_from(idx)
            .into_iter()
            .filter(|&n| self.is_leaf(n))
            .collect()
    }

    /// Nodes owning a classifier: those with at least two children, in pre-order.
    pub fn non_leaf_nodes(&self) -> Vec<NodeIdx> {
        self.preorder()
            .into_iter()
            .filter(|&n| self.nodes[n].children.len() >= 2)
            .collect()
    }

    /// `[root, ..., idx]`.
    pub fn path_to_root(&self, idx: NodeIdx) -> Vec<NodeIdx> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Ids from the root's child down to `idx`; empty for the root itself.
    pub fn category_path(&self, idx: NodeIdx) -> Vec<String> {
        self.path_to_root(idx)
            .into_iter()
            .skip(1)
            .map(|n| self.nodes[n].id.clone())
            .collect()
    }

    /// Child of the root whose subtree contains `idx`.
    pub fn level1_ancestor(&self, idx: NodeIdx) -> Option<NodeIdx> {
        self.path_to_root(idx).get(1).copied()
    }

    /// The child of `ancestor` whose subtree contains `idx`, if any.
    pub fn child_towards(&self, ancestor: NodeIdx, idx: NodeIdx) -> Option<NodeIdx> {
        let path = self.path_to_root(idx);
        let pos = path.iter().position(|&n| n == ancestor)?;
        path.get(pos + 1).copied()
    }

    /// Relative directory path of a node, e.g. `science/geology`.
    pub fn dir_path(&self, idx: NodeIdx) -> std::path::PathBuf {
        self.category_path(idx).iter().collect()
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
