// Neighbor joining (Saitou & Nei 1987).
//
// Q(i,j) = (r-2) d(i,j) - R_i - R_j over the r active clusters; the pair with
// the smallest Q is joined. Ties go to the lexicographically smallest (i,j)
// in active-list order. Negative limb lengths are clamped to zero. The last
// three clusters are attached to a single central node, which becomes the root.

use super::{NodeId, PhyloTree, Result, TreeError};
use crate::distmat::DistanceMatrix;

pub fn neighbor_joining(d: &DistanceMatrix) -> Result<PhyloTree> {
    let n = d.len();
    if n < 3 {
        return Err(TreeError::TooFewTaxa(n));
    }

    // Clusters are built bottom-up as detached subtrees, then grafted.
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut length: Vec<f64> = vec![0.0; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| d.row(i).to_vec()).collect();

    while active.len() > 3 {
        let r = active.len();
        let sums: Vec<f64> = (0..r).map(|a| (0..r).map(|b| dist[a][b]).sum()).collect();
        let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
        for i in 0..r {
            for j in i + 1..r {
                let q = (r as f64 - 2.0) * dist[i][j] - sums[i] - sums[j];
                if q < best {
                    best = q;
                    bi = i;
                    bj = j;
                }
            }
        }
        let dij = dist[bi][bj];
        let li = 0.5 * dij + (sums[bi] - sums[bj]) / (2.0 * (r as f64 - 2.0));
        let lj = dij - li;

        let node = parent.len();
        parent.push(None);
        length.push(0.0);
        for (slot, limb) in [(bi, li), (bj, lj)] {
            parent[active[slot]] = Some(node);
            length[active[slot]] = limb.max(0.0);
        }

        let merged: Vec<f64> = (0..r)
            .map(|k| 0.5 * (dist[bi][k] + dist[bj][k] - dij))
            .collect();
        for k in 0..r {
            dist[bi][k] = merged[k];
            dist[k][bi] = merged[k];
        }
        dist[bi][bi] = 0.0;
        active[bi] = node;
        active.remove(bj);
        dist.remove(bj);
        for row in dist.iter_mut() {
            row.remove(bj);
        }
    }

    let center = parent.len();
    parent.push(None);
    length.push(0.0);
    let (d01, d02, d12) = (dist[0][1], dist[0][2], dist[1][2]);
    let limbs = [
        0.5 * (d01 + d02 - d12),
        0.5 * (d01 + d12 - d02),
        0.5 * (d02 + d12 - d01),
    ];
    for (slot, limb) in limbs.into_iter().enumerate() {
        parent[active[slot]] = Some(center);
        length[active[slot]] = limb.max(0.0);
    }

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); parent.len()];
    for (c, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(c);
        }
    }
    let mut tree = PhyloTree::new();
    let mut stack: Vec<(usize, NodeId)> = vec![(center, tree.root())];
    while let Some((cluster, id)) = stack.pop() {
        for &c in &children[cluster] {
            let label = (c < n).then(|| d.labels()[c].clone());
            let child = tree.add_child(id, label, Some(length[c]));
            stack.push((c, child));
        }
    }
    Ok(tree)
}
