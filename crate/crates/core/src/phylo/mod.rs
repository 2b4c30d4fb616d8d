//! Phylogenetic trees: construction, Newick I/O, comparison and consensus.

mod consensus;
mod newick;
mod nj;
mod random;
mod splits;

pub use consensus::{consensus, ConsensusRule};
pub use newick::{parse_newick, NewickError};
pub use nj::neighbor_joining;
pub use random::{permutation_test, permutation_test_with_mode, random_tree};
pub use splits::{rf_distance, Bipartition, LeafIndex, RfMode};

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("need at least 3 taxa, got {0}")]
    TooFewTaxa(usize),
    #[error("leaf label sets differ")]
    LeafSetMismatch,
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("invalid consensus threshold {0} (must be in [0.5, 1))")]
    InvalidThreshold(f64),
    #[error("no trees given")]
    Empty,
    #[error(transparent)]
    Newick(#[from] NewickError),
}

pub type Result<T> = std::result::Result<T, TreeError>;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub label: Option<String>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Length of the edge to the parent.
    pub length: Option<f64>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A tree stored as an arena of nodes with a designated root.
///
/// Trees are always rooted structurally; unrooted comparisons simply ignore
/// where the root sits.
#[derive(Clone, Debug, PartialEq)]
pub struct PhyloTree {
    nodes: Vec<Node>,
    root: NodeId,
}

impl Default for PhyloTree {
    fn default() -> Self {
        Self::new()
    }
}

impl PhyloTree {
    /// A tree holding a single unlabeled root.
    pub fn new() -> Self {
        Self {
            nodes: vec![Node {
                label: None,
                parent: None,
                children: Vec::new(),
                length: None,
            }],
            root: 0,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_label(&mut self, id: NodeId, label: impl Into<String>) {
        self.nodes[id].label = Some(label.into());
    }

    pub fn set_length(&mut self, id: NodeId, length: Option<f64>) {
        self.nodes[id].length = length;
    }

    pub fn add_child(&mut self, parent: NodeId, label: Option<String>, length: Option<f64>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            label,
            parent: Some(parent),
            children: Vec::new(),
            length,
        });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn add_leaf(&mut self, parent: NodeId, label: impl Into<String>, length: Option<f64>) -> NodeId {
        self.add_child(parent, Some(label.into()), length)
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&n| self.nodes[n].is_leaf()).collect()
    }

    /// Leaf labels in sorted order.
    pub fn leaf_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .leaves()
            .into_iter()
            .filter_map(|n| self.nodes[n].label.clone())
            .collect();
        labels.sort();
        labels
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    pub fn postorder(&self) -> Vec<NodeId> {
        let mut out = self.preorder();
        out.reverse();
        out
    }

    /// Whether any edge carries an explicit length.
    pub fn has_lengths(&self) -> bool {
        self.nodes.iter().any(|n| n.length.is_some())
    }

    /// Checks connectivity, acyclicity, leaf labels and branch lengths.
    pub fn validate(&self) -> Result<()> {
        let reachable = self.preorder();
        if reachable.len() != self.nodes.len() {
            return Err(TreeError::Invalid("tree is not connected or has cycles".into()));
        }
        let mut seen = HashSet::new();
        for &id in &reachable {
            let node = &self.nodes[id];
            if !seen.insert(id) {
                return Err(TreeError::Invalid("cycle detected".into()));
            }
            for &c in &node.children {
                if self.nodes[c].parent != Some(id) {
                    return Err(TreeError::Invalid(format!("node {c} has inconsistent parent")));
                }
            }
            if let Some(len) = node.length {
                if !len.is_finite() || len < 0.0 {
                    return Err(TreeError::Invalid(format!("branch length {len} is negative or non-finite")));
                }
            }
        }
        let mut labels = HashSet::new();
        for id in self.leaves() {
            match &self.nodes[id].label {
                Some(l) if !l.is_empty() => {
                    if !labels.insert(l.as_str()) {
                        return Err(TreeError::Invalid(format!("duplicate leaf label `{l}`")));
                    }
                }
                _ => return Err(TreeError::Invalid("unlabeled leaf".into())),
            }
        }
        Ok(())
    }

    /// Converts labeled internal nodes into pendant leaves of length zero, so
    /// that every labeled object sits at a leaf.
    pub fn with_internal_labels_as_leaves(&self) -> PhyloTree {
        let mut out = self.clone();
        for id in 0..self.nodes.len() {
            if !self.nodes[id].is_leaf() {
                if let Some(label) = out.nodes[id].label.take() {
                    out.add_leaf(id, label, Some(0.0));
                }
            }
        }
        out
    }

    /// Restricts the tree to the given leaf labels, pruning other leaves and
    /// suppressing the unary nodes left behind.
    pub fn restrict_to(&self, keep: &[String]) -> Result<PhyloTree> {
        let keep: HashSet<&str> = keep.iter().map(String::as_str).collect();
        let mut out = PhyloTree::new();
        if self.restrict_into(self.root, &keep, &mut out, None)?.is_none() {
            return Err(TreeError::Invalid("no leaves kept".into()));
        }
        out.validate()?;
        Ok(out)
    }

    /// Copies the pruned subtree of `id` under `parent` (or as root). Returns
    /// the accumulated length of the edge above the copied node.
    fn restrict_into(
        &self,
        id: NodeId,
        keep: &HashSet<&str>,
        out: &mut PhyloTree,
        parent: Option<NodeId>,
    ) -> Result<Option<(Option<f64>, NodeId)>> {
        let node = &self.nodes[id];
        if node.is_leaf() {
            let label = node.label.as_deref().unwrap_or("");
            if !keep.contains(label) {
                return Ok(None);
            }
            let new = match parent {
                Some(p) => out.add_leaf(p, label, node.length),
                None => {
                    out.nodes[0].label = Some(label.to_string());
                    0
                }
            };
            return Ok(Some((node.length, new)));
        }
        let kept: Vec<NodeId> = node
            .children
            .iter()
            .copied()
            .filter(|&c| self.subtree_has_kept_leaf(c, keep))
            .collect();
        match kept.len() {
            0 => Ok(None),
            1 => {
                // Unary after pruning: splice the child up, summing lengths.
                let result = self.restrict_into(kept[0], keep, out, parent)?;
                Ok(result.map(|(len, new)| {
                    let merged = add_lengths(len, node.length);
                    if parent.is_some() {
                        out.nodes[new].length = merged;
                    }
                    (merged, new)
                }))
            }
            _ => {
                let new = match parent {
                    Some(p) => out.add_child(p, None, node.length),
                    None => 0,
                };
                for c in kept {
                    self.restrict_into(c, keep, out, Some(new))?;
                }
                Ok(Some((node.length, new)))
            }
        }
    }

    fn subtree_has_kept_leaf(&self, id: NodeId, keep: &HashSet<&str>) -> bool {
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.is_leaf() {
                if node.label.as_deref().is_some_and(|l| keep.contains(l)) {
                    return true;
                }
            } else {
                stack.extend(&node.children);
            }
        }
        false
    }

    pub fn to_newick(&self) -> String {
        newick::to_newick(self)
    }

    /// Smallest leaf label below each node, indexed by node id.
    pub(crate) fn min_labels(&self) -> Vec<Option<String>> {
        let mut mins: Vec<Option<String>> = vec![None; self.nodes.len()];
        for id in self.postorder() {
            let node = &self.nodes[id];
            let m = if node.is_leaf() {
                node.label.clone()
            } else {
                node.children.iter().filter_map(|&c| mins[c].clone()).min()
            };
            mins[id] = m;
        }
        mins
    }

    /// Path-length matrix between leaves (missing lengths count as 1).
    pub fn path_lengths(&self) -> (Vec<String>, Vec<f64>) {
        let leaves = self.leaves();
        let mut labeled: Vec<(String, NodeId)> = leaves
            .iter()
            .map(|&l| (self.nodes[l].label.clone().unwrap_or_default(), l))
            .collect();
        labeled.sort();
        let n = labeled.len();
        let mut depth = vec![0.0; self.nodes.len()];
        for id in self.preorder() {
            if let Some(p) = self.nodes[id].parent {
                depth[id] = depth[p] + self.nodes[id].length.unwrap_or(1.0);
            }
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let lca = self.lca(labeled[i].1, labeled[j].1);
                let d = depth[labeled[i].1] + depth[labeled[j].1] - 2.0 * depth[lca];
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        (labeled.into_iter().map(|(l, _)| l).collect(), values)
    }

    fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let mut ancestors = HashSet::new();
        let mut cur = Some(a);
        while let Some(n) = cur {
            ancestors.insert(n);
            cur = self.nodes[n].parent;
        }
        let mut cur = b;
        while !ancestors.contains(&cur) {
            cur = self.nodes[cur].parent.expect("nodes share a root");
        }
        cur
    }
}

fn add_lengths(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        (x, y) => Some(x.unwrap_or(0.0) + y.unwrap_or(0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_problems() {
        let mut t = PhyloTree::new();
        t.add_leaf(0, "A", Some(1.0));
        t.add_leaf(0, "A", Some(1.0));
        assert!(t.validate().is_err());
        let mut t = PhyloTree::new();
        t.add_leaf(0, "A", Some(-1.0));
        t.add_leaf(0, "B", None);
        assert!(t.validate().is_err());
        let mut t = PhyloTree::new();
        t.add_child(0, None, None);
        t.add_leaf(0, "B", None);
        assert!(t.validate().is_err());
    }

    #[test]
    fn restrict_suppresses_unary_nodes() {
        let t = parse_newick("((A:1,(B:2,X:1):3):1,(C:1,Y:2):4);").unwrap();
        let r = t.restrict_to(&["A".into(), "B".into(), "C".into()]).unwrap();
        assert_eq!(r.leaf_labels(), vec!["A", "B", "C"]);
        let (labels, d) = r.path_lengths();
        assert_eq!(labels, vec!["A", "B", "C"]);
        // A-B = 1 + 3 + 2, B-C = 2 + 3 + 1 + 4 + 1
        assert_eq!(d[1], 6.0);
        assert_eq!(d[5], 11.0);
    }

    #[test]
    fn internal_labels_become_leaves() {
        let t = parse_newick("((A,B)x,C)r;").unwrap();
        let all = t.with_internal_labels_as_leaves();
        assert_eq!(all.leaf_labels(), vec!["A", "B", "C", "r", "x"]);
        all.validate().unwrap();
    }
}
