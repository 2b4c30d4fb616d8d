use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{rf_distance, NodeId, PhyloTree, Result, RfMode, TreeError};

/// Fully resolved unrooted tree by random sequential leaf addition: start
/// from the 3-leaf star, then attach each further leaf to a uniformly chosen
/// edge. All branch lengths are 1.
pub fn random_tree<S: AsRef<str>>(labels: &[S], seed: u64) -> Result<PhyloTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree_with(labels, &mut rng)
}

pub(crate) fn random_tree_with<S: AsRef<str>, R: Rng>(labels: &[S], rng: &mut R) -> Result<PhyloTree> {
    let n = labels.len();
    if n < 3 {
        return Err(TreeError::TooFewTaxa(n));
    }
    // Leaves are vertices 0..n, internal vertices n.. .
    let center = n;
    let mut edges: Vec<(usize, usize)> = vec![(center, 0), (center, 1), (center, 2)];
    let mut next = n + 1;
    for leaf in 3..n {
        let k = rng.gen_range(0..edges.len());
        let (u, v) = edges[k];
        let w = next;
        next += 1;
        edges[k] = (u, w);
        edges.push((w, v));
        edges.push((w, leaf));
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); next];
    for &(u, v) in &edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut tree = PhyloTree::new();
    let mut stack: Vec<(usize, usize, NodeId)> = vec![(center, usize::MAX, tree.root())];
    while let Some((vertex, from, id)) = stack.pop() {
        for &nb in &adj[vertex] {
            if nb == from {
                continue;
            }
            let label = (nb < n).then(|| labels[nb].as_ref().to_string());
            let child = tree.add_child(id, label, Some(1.0));
            stack.push((nb, vertex, child));
        }
    }
    tree.validate()?;
    Ok(tree)
}

/// Fraction of `trials` random trees strictly closer (unrooted RF) to
/// `truth` than `estimated` is.
pub fn permutation_test(estimated: &PhyloTree, truth: &PhyloTree, trials: usize, seed: u64) -> Result<f64> {
    permutation_test_with_mode(estimated, truth, trials, seed, RfMode::Unrooted)
}

/// As [`permutation_test`] with an explicit RF mode. Trial `t` draws from its
/// own ChaCha stream, so results do not depend on thread scheduling.
pub fn permutation_test_with_mode(
    estimated: &PhyloTree,
    truth: &PhyloTree,
    trials: usize,
    seed: u64,
    mode: RfMode,
) -> Result<f64> {
    if trials == 0 {
        return Err(TreeError::Invalid("permutation test needs at least one trial".into()));
    }
    let observed = rf_distance(estimated, truth, mode)?;
    if observed == 0 {
        return Ok(0.0);
    }
    let labels = truth.leaf_labels();
    let better = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let candidate = random_tree_with(&labels, &mut rng)?;
            Ok(usize::from(rf_distance(&candidate, truth, mode)? < observed))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(better as f64 / trials as f64)
}
