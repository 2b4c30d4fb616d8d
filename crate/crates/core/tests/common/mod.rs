//! Independent oracles shared by integration tests and the acceptance suite.
#![allow(dead_code)]

use rand::Rng;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                #[allow(clippy::needless_range_loop)]
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].total_cmp(&m[x][x]));
    let values = order.iter().map(|&k| m[k][k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|i| v[i][k]).collect()).collect();
    (values, vectors)
}

/// Brute-force top-2 PCA via the n x n Gram matrix of centered rows.
/// Returns (coordinates, explained fractions).
pub fn pca_oracle(points: &[Vec<f64>]) -> (Vec<[f64; 2]>, [f64; 2]) {
    let n = points.len();
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let gram: Vec<Vec<f64>> = x
        .iter()
        .map(|a| x.iter().map(|b| a.iter().zip(b).map(|(s, t)| s * t).sum()).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(&gram);
    let trace: f64 = vals.iter().sum();
    let coords = (0..n)
        .map(|i| [vals[0].max(0.0).sqrt() * vecs[0][i], vals[1].max(0.0).sqrt() * vecs[1][i]])
        .collect();
    (coords, [vals[0] / trace, vals[1] / trace])
}

/// A random binary unrooted tree as an edge list over vertices; leaves are
/// 0..n. Built by random pairwise merging, independent of the library's
/// generator.
pub struct EdgeTree {
    pub leaves: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl EdgeTree {
    pub fn random<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        assert!(n >= 3);
        let mut pool: Vec<usize> = (0..n).collect();
        let mut next = n;
        let mut edges = Vec::new();
        while pool.len() > 3 {
            let a = pool.swap_remove(rng.gen_range(0..pool.len()));
            let b = pool.swap_remove(rng.gen_range(0..pool.len()));
            edges.push((next, a, rng.gen_range(lo..hi)));
            edges.push((next, b, rng.gen_range(lo..hi)));
            pool.push(next);
            next += 1;
        }
        for &c in &pool {
            edges.push((next, c, rng.gen_range(lo..hi)));
        }
        Self { leaves: n, edges }
    }

    pub fn label(i: usize) -> String {
        format!("t{i:02}")
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.leaves).map(Self::label).collect()
    }

    fn vertices(&self) -> usize {
        self.edges.iter().map(|e| e.0.max(e.1)).max().unwrap() + 1
    }

    /// Leaf-to-leaf path lengths by graph search.
    pub fn path_matrix(&self) -> Vec<Vec<f64>> {
        let nv = self.vertices();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        (0..self.leaves)
            .map(|s| {
                let mut dist = vec![f64::NAN; nv];
                dist[s] = 0.0;
                let mut stack = vec![s];
                while let Some(u) = stack.pop() {
                    for &(v, w) in &adj[u] {
                        if dist[v].is_nan() {
                            dist[v] = dist[u] + w;
                            stack.push(v);
                        }
                    }
                }
                dist[..self.leaves].to_vec()
            })
            .collect()
    }

    /// Newick rooted at the last vertex, lengths printed with full precision.
    pub fn to_newick(&self) -> String {
        let nv = self.vertices();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        fn rec(adj: &[Vec<(usize, f64)>], u: usize, from: usize, leaves: usize, out: &mut String) {
            if u < leaves {
                out.push_str(&EdgeTree::label(u));
                return;
            }
            out.push('(');
            let mut first = true;
            for &(v, w) in &adj[u] {
                if v == from {
                    continue;
                }
                if !first {
                    out.push(',');
                }
                first = false;
                rec(adj, v, u, leaves, out);
                out.push_str(&format!(":{w:?}"));
            }
            out.push(')');
        }
        let mut s = String::new();
        rec(&adj, nv - 1, usize::MAX, self.leaves, &mut s);
        s.push(';');
        s
    }

    /// Adds `extra` to every pendant edge.
    pub fn lengthen_pendants(&mut self, extra: f64) {
        for e in self.edges.iter_mut() {
            if e.0 < self.leaves || e.1 < self.leaves {
                e.2 += extra;
            }
        }
    }
}

/// Classical multidimensional scaling: points whose Euclidean distances
/// reproduce `d` when `-1/2 J D^2 J` is positive semidefinite.
pub fn classical_mds(d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let sq: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|x| x * x).collect()).collect();
    let row: Vec<f64> = sq.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let all: f64 = row.iter().sum::<f64>() / n as f64;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -0.5 * (sq[i][j] - row[i] - row[j] + all)).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(&b);
    let top = vals[0];
    assert!(vals.iter().all(|&v| v >= -1e-9 * top), "not Euclidean: {vals:?}");
    (0..n)
        .map(|i| {
            vals.iter()
                .zip(&vecs)
                .filter(|(v, _)| **v > 1e-12 * top)
                .map(|(v, u)| v.sqrt() * u[i])
                .collect()
        })
        .collect()
}

pub fn four_point_holds(d: &[Vec<f64>], tol: f64) -> bool {
    let n = d.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let mut s = [d[i][j] + d[k][l], d[i][k] + d[j][l], d[i][l] + d[j][k]];
                    s.sort_by(f64::total_cmp);
                    if (s[2] - s[1]).abs() > tol * s[2].max(1.0) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
