use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::splits::LeafIndex;
use super::{Bipartition, NodeId, PhyloTree, Result, TreeError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConsensusRule {
    /// Splits present in every tree.
    Strict,
    /// Splits present in more than the given fraction of trees.
    Majority(f64),
}

impl ConsensusRule {
    pub fn majority() -> Self {
        ConsensusRule::Majority(0.5)
    }
}

impl fmt::Display for ConsensusRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConsensusRule::Strict => f.write_str("strict"),
            ConsensusRule::Majority(p) => write!(f, "majority:{p}"),
        }
    }
}

impl FromStr for ConsensusRule {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(ConsensusRule::Strict),
            "majority" => Ok(ConsensusRule::majority()),
            _ => {
                let p = s
                    .strip_prefix("majority:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| TreeError::Invalid(format!("unknown consensus rule `{s}`")))?;
                if !(0.5..1.0).contains(&p) {
                    return Err(TreeError::InvalidThreshold(p));
                }
                Ok(ConsensusRule::Majority(p))
            }
        }
    }
}

/// Consensus of trees over a shared leaf set. The result may be
/// multifurcating and carries no branch lengths.
pub fn consensus(trees: &[PhyloTree], rule: ConsensusRule) -> Result<PhyloTree> {
    let first = trees.first().ok_or(TreeError::Empty)?;
    if let ConsensusRule::Majority(p) = rule {
        if !(0.5..1.0).contains(&p) {
            return Err(TreeError::InvalidThreshold(p));
        }
    }
    let labels = first.leaf_labels();
    if trees.iter().any(|t| t.leaf_labels() != labels) {
        return Err(TreeError::LeafSetMismatch);
    }
    let index = LeafIndex::new(labels);

    let mut counts: BTreeMap<Bipartition, usize> = BTreeMap::new();
    for t in trees {
        for s in t.splits(&index)? {
            *counts.entry(s).or_default() += 1;
        }
    }
    let total = trees.len() as f64;
    let kept: Vec<Bipartition> = counts
        .into_iter()
        .filter(|(_, c)| match rule {
            ConsensusRule::Strict => *c == trees.len(),
            ConsensusRule::Majority(p) => *c as f64 / total > p,
        })
        .map(|(s, _)| s)
        .collect();
    Ok(tree_from_splits(&index, kept))
}

/// Assembles a tree from pairwise-compatible splits. Each split's stored side
/// excludes leaf 0, so sides form a laminar family hanging off the root.
pub(crate) fn tree_from_splits(index: &LeafIndex, mut splits: Vec<Bipartition>) -> PhyloTree {
    splits.sort_by(|a, b| b.side_len().cmp(&a.side_len()).then_with(|| a.cmp(b)));
    let mut tree = PhyloTree::new();
    let mut placed: Vec<(Bipartition, NodeId)> = Vec::with_capacity(splits.len());
    for s in splits {
        // Smallest already-placed side containing this one; sorted by size
        // descending, so the last match is the tightest.
        let parent = placed
            .iter()
            .rev()
            .find(|(p, _)| s.bits().is_subset(p.bits()))
            .map_or(tree.root(), |(_, id)| *id);
        let id = tree.add_child(parent, None, None);
        placed.push((s, id));
    }
    for (leaf, label) in index.labels().iter().enumerate() {
        let parent = placed
            .iter()
            .rev()
            .find(|(p, _)| p.bits().contains(leaf))
            .map_or(tree.root(), |(_, id)| *id);
        tree.add_leaf(parent, label.clone(), None);
    }
    tree
}
