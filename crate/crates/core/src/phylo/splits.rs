use std::collections::{BTreeSet, HashMap};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::{PhyloTree, Result, TreeError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RfMode {
    /// Symmetric difference of nontrivial bipartitions; root placement ignored.
    #[default]
    Unrooted,
    /// Symmetric difference of clades below the root.
    Rooted,
}

impl std::str::FromStr for RfMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unrooted" => Ok(RfMode::Unrooted),
            "rooted" => Ok(RfMode::Rooted),
            other => Err(format!("unknown RF mode `{other}` (expected unrooted or rooted)")),
        }
    }
}

/// Maps sorted leaf labels to bit positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafIndex {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LeafIndex {
    pub fn new(mut labels: Vec<String>) -> Self {
        labels.sort();
        labels.dedup();
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }

    pub fn of(tree: &PhyloTree) -> Self {
        Self::new(tree.leaf_labels())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// One side of a leaf split. The stored side never contains the smallest
/// label (bit 0), so each split has exactly one representation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bipartition(FixedBitSet);

impl Bipartition {
    pub fn from_side(side: FixedBitSet) -> Self {
        if side.contains(0) {
            let mut flipped = side;
            flipped.toggle_range(..);
            Bipartition(flipped)
        } else {
            Bipartition(side)
        }
    }

    /// Builds a split from labels on one side.
    pub fn from_labels<S: AsRef<str>>(index: &LeafIndex, side: &[S]) -> Option<Self> {
        let mut bits = FixedBitSet::with_capacity(index.len());
        for l in side {
            bits.insert(index.position(l.as_ref())?);
        }
        Some(Self::from_side(bits))
    }

    pub fn bits(&self) -> &FixedBitSet {
        &self.0
    }

    pub fn side_len(&self) -> usize {
        self.0.count_ones(..)
    }

    /// Both sides have at least two leaves.
    pub fn is_nontrivial(&self) -> bool {
        let k = self.side_len();
        k >= 2 && self.0.len() - k >= 2
    }

    pub fn side_labels<'a>(&self, index: &'a LeafIndex) -> Vec<&'a str> {
        self.0.ones().map(|i| index.labels[i].as_str()).collect()
    }

    pub fn compatible_with(&self, other: &Bipartition) -> bool {
        // Both exclude bit 0, so the sides must nest or be disjoint.
        self.0.is_subset(&other.0) || other.0.is_subset(&self.0) || self.0.is_disjoint(&other.0)
    }
}

/// Leaf sets below every node, indexed by node id.
pub(crate) fn clusters(tree: &PhyloTree, index: &LeafIndex) -> Result<Vec<FixedBitSet>> {
    let mut sets = vec![FixedBitSet::with_capacity(index.len()); tree.len()];
    for id in tree.postorder() {
        let node = tree.node(id);
        if node.is_leaf() {
            let label = node.label.as_deref().ok_or(TreeError::LeafSetMismatch)?;
            let pos = index.position(label).ok_or(TreeError::LeafSetMismatch)?;
            sets[id].insert(pos);
        } else {
            let mut acc = FixedBitSet::with_capacity(index.len());
            for &c in &node.children {
                acc.union_with(&sets[c]);
            }
            sets[id] = acc;
        }
    }
    Ok(sets)
}

impl PhyloTree {
    /// Nontrivial bipartitions induced by the tree's edges.
    pub fn splits(&self, index: &LeafIndex) -> Result<BTreeSet<Bipartition>> {
        let sets = clusters(self, index)?;
        Ok(self
            .preorder()
            .into_iter()
            .filter(|&id| id != self.root())
            .map(|id| Bipartition::from_side(sets[id].clone()))
            .filter(Bipartition::is_nontrivial)
            .collect())
    }

    /// Clades (leaf sets below non-root nodes) with at least two leaves and
    /// fewer than all leaves.
    pub fn clades(&self, index: &LeafIndex) -> Result<BTreeSet<FixedBitSet>> {
        let sets = clusters(self, index)?;
        let n = index.len();
        Ok(self
            .preorder()
            .into_iter()
            .filter(|&id| id != self.root())
            .map(|id| sets[id].clone())
            .filter(|s| {
                let k = s.count_ones(..);
                k >= 2 && k < n
            })
            .collect())
    }
}

pub fn rf_distance(a: &PhyloTree, b: &PhyloTree, mode: RfMode) -> Result<usize> {
    let labels = a.leaf_labels();
    if labels != b.leaf_labels() {
        return Err(TreeError::LeafSetMismatch);
    }
    let index = LeafIndex::new(labels);
    let d = match mode {
        RfMode::Unrooted => {
            let (sa, sb) = (a.splits(&index)?, b.splits(&index)?);
            sa.symmetric_difference(&sb).count()
        }
        RfMode::Rooted => {
            let (ca, cb) = (a.clades(&index)?, b.clades(&index)?);
            ca.symmetric_difference(&cb).count()
        }
    };
    Ok(d)
}
