//! Phenotype side: response embeddings per model, dataset, prompt and run.
//!
//! Embeddings are ingested from JSONL, never computed here. Model distances
//! average the metric over cross-model pairs of embeddings that answer the
//! same prompt; trees are built per dataset and summarized by consensus.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distmat::{DistanceMatrix, MatrixError, Source};
use crate::metrics::{self, KahanSum, MetricError, MetricKind};
use crate::phylo::{self, ConsensusRule, PhyloTree, RfMode, TreeError};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: embedding has dimension {got}, corpus has {expected}")]
    DimensionMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: empty embedding")]
    EmptyEmbedding { line: usize },
    #[error("line {line}: component {index} is not finite")]
    NonFinite { line: usize, index: usize },
    #[error("duplicate record for model `{model}`, dataset `{dataset}`, prompt `{prompt}`, run {run}")]
    DuplicateKey {
        model: String,
        dataset: String,
        prompt: String,
        run: u32,
    },
    #[error("model `{model}` has no records in scope {scope}")]
    MissingModel { model: String, scope: Scope },
    #[error("models `{a}` and `{b}` share no prompt in scope {scope}")]
    NoCommonPrompt { a: String, b: String, scope: Scope },
    #[error("models `{a}` and `{b}`: {source}")]
    Metric {
        a: String,
        b: String,
        #[source]
        source: MetricError,
    },
    #[error("data has zero variance")]
    DegenerateData,
    #[error("pca needs at least 2 points of dimension >= 2, got {points} of dimension {dimension}")]
    TooSmall { points: usize, dimension: usize },
    #[error("invalid scope `{0}` (expected global, dataset:<d> or prompt:<d>:<p>)")]
    InvalidScope(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(rename = "dataset")]
    pub dataset_id: String,
    #[serde(rename = "prompt")]
    pub prompt_id: String,
    #[serde(rename = "run")]
    pub run_index: u32,
    #[serde(rename = "embedding")]
    pub vector: Vec<f64>,
}

/// Validated records sharing one embedding dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    records: Vec<EmbeddingRecord>,
    dimension: usize,
}

impl Corpus {
    /// Validates records in order; errors report 1-based record positions.
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let lines: Vec<usize> = (1..=records.len()).collect();
        Self::with_lines(records, &lines)
    }

    fn with_lines(records: Vec<EmbeddingRecord>, lines: &[usize]) -> Result<Self> {
        let mut dimension = None;
        let mut keys = HashSet::new();
        for (r, &line) in records.iter().zip(lines) {
            if r.vector.is_empty() {
                return Err(EmbeddingError::EmptyEmbedding { line });
            }
            let expected = *dimension.get_or_insert(r.vector.len());
            if r.vector.len() != expected {
                return Err(EmbeddingError::DimensionMismatch {
                    line,
                    expected,
                    got: r.vector.len(),
                });
            }
            if let Some(index) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { line, index });
            }
            if !keys.insert((&r.model_id, &r.dataset_id, &r.prompt_id, r.run_index)) {
                return Err(EmbeddingError::DuplicateKey {
                    model: r.model_id.clone(),
                    dataset: r.dataset_id.clone(),
                    prompt: r.prompt_id.clone(),
                    run: r.run_index,
                });
            }
        }
        Ok(Self {
            dimension: dimension.unwrap_or(0),
            records,
        })
    }

    /// One JSON object per line; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord =
                serde_json::from_str(raw).map_err(|source| EmbeddingError::Json { line: i + 1, source })?;
            records.push(rec);
            lines.push(i + 1);
        }
        Self::with_lines(records, &lines)
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn models(&self) -> Vec<String> {
        unique(self.records.iter().map(|r| &r.model_id))
    }

    pub fn datasets(&self) -> Vec<String> {
        unique(self.records.iter().map(|r| &r.dataset_id))
    }

    pub fn prompts(&self, dataset: &str) -> Vec<String> {
        unique(
            self.records
                .iter()
                .filter(|r| r.dataset_id == dataset)
                .map(|r| &r.prompt_id),
        )
    }

    /// Points for one prompt, labeled `<model>#<run>`, ordered by model then run.
    pub fn prompt_points(&self, dataset: &str, prompt: &str) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut rs: Vec<&EmbeddingRecord> = self
            .records
            .iter()
            .filter(|r| r.dataset_id == dataset && r.prompt_id == prompt)
            .collect();
        rs.sort_by(|a, b| (&a.model_id, a.run_index).cmp(&(&b.model_id, b.run_index)));
        rs.into_iter()
            .map(|r| (format!("{}#{}", r.model_id, r.run_index), r.vector.clone()))
            .unzip()
    }
}

fn unique<'a>(it: impl Iterator<Item = &'a String>) -> Vec<String> {
    it.cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_jsonl(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scope {
    Prompt { dataset: String, prompt: String },
    Dataset(String),
    Global,
}

impl Scope {
    fn contains(&self, r: &EmbeddingRecord) -> bool {
        match self {
            Scope::Global => true,
            Scope::Dataset(d) => r.dataset_id == *d,
            Scope::Prompt { dataset, prompt } => r.dataset_id == *dataset && r.prompt_id == *prompt,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => f.write_str("global"),
            Scope::Dataset(d) => write!(f, "dataset:{d}"),
            Scope::Prompt { dataset, prompt } => write!(f, "prompt:{dataset}:{prompt}"),
        }
    }
}

impl FromStr for Scope {
    type Err = EmbeddingError;

    /// `prompt:<d>:<p>` splits at the first colon after the prefix.
    fn from_str(s: &str) -> Result<Self> {
        if s == "global" {
            return Ok(Scope::Global);
        }
        if let Some(d) = s.strip_prefix("dataset:").filter(|d| !d.is_empty()) {
            return Ok(Scope::Dataset(d.to_string()));
        }
        if let Some((d, p)) = s.strip_prefix("prompt:").and_then(|rest| rest.split_once(':')) {
            if !d.is_empty() && !p.is_empty() {
                return Ok(Scope::Prompt {
                    dataset: d.to_string(),
                    prompt: p.to_string(),
                });
            }
        }
        Err(EmbeddingError::InvalidScope(s.to_string()))
    }
}

/// Models are the corpus's sorted model ids. Entry (a, b) is the mean metric
/// distance over every pair (embedding of a, embedding of b) that answers the
/// same dataset and prompt within `scope`.
/// One model's vectors for a prompt, tagged with the run index.
type RunVectors<'a> = Vec<(u32, &'a [f64])>;

pub fn model_distance_matrix(corpus: &Corpus, metric: MetricKind, scope: &Scope) -> Result<DistanceMatrix> {
    let models = corpus.models();
    let pos: BTreeMap<&str, usize> = models.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();

    // (dataset, prompt) -> per-model vectors ordered by run
    let mut groups: BTreeMap<(&str, &str), Vec<RunVectors>> = BTreeMap::new();
    let mut present = vec![false; models.len()];
    for r in corpus.records.iter().filter(|r| scope.contains(r)) {
        let m = pos[r.model_id.as_str()];
        present[m] = true;
        groups
            .entry((&r.dataset_id, &r.prompt_id))
            .or_insert_with(|| vec![Vec::new(); models.len()])[m]
            .push((r.run_index, &r.vector));
    }
    if let Some(m) = present.iter().position(|p| !p) {
        return Err(EmbeddingError::MissingModel {
            model: models[m].clone(),
            scope: scope.clone(),
        });
    }
    for g in groups.values_mut() {
        g.iter_mut().for_each(|v| v.sort_by_key(|(run, _)| *run));
    }

    let n = models.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut sum = KahanSum::default();
            let mut count = 0usize;
            for g in groups.values() {
                for (_, x) in &g[a] {
                    for (_, y) in &g[b] {
                        let d = metrics::distance(metric, x, y).map_err(|source| EmbeddingError::Metric {
                            a: models[a].clone(),
                            b: models[b].clone(),
                            source,
                        })?;
                        sum.add(d);
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(EmbeddingError::NoCommonPrompt {
                    a: models[a].clone(),
                    b: models[b].clone(),
                    scope: scope.clone(),
                });
            }
            Ok(sum.value() / count as f64)
        })
        .collect::<Result<_>>()?;

    let lookup: BTreeMap<(usize, usize), f64> = pairs.into_iter().zip(values).collect();
    Ok(DistanceMatrix::from_fn(
        models,
        metric,
        Source::Embedding(scope.to_string()),
        |i, j| lookup[&(i, j)],
    )?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTrees {
    /// Neighbor-joining tree per dataset.
    pub trees: BTreeMap<String, PhyloTree>,
    /// Majority-rule consensus across the dataset trees.
    pub consensus: PhyloTree,
    /// Unrooted RF of each dataset tree to the supplied truth.
    pub rf: Option<BTreeMap<String, usize>>,
    pub consensus_rf: Option<usize>,
}

impl DatasetTrees {
    /// Dataset whose tree is closest to the truth; ties go to the first name.
    pub fn most_informative(&self) -> Option<(&str, usize)> {
        let rf = self.rf.as_ref()?;
        rf.iter()
            .min_by_key(|(_, &v)| v)
            .map(|(d, &v)| (d.as_str(), v))
    }
}

pub fn per_dataset_trees(corpus: &Corpus, metric: MetricKind, truth: Option<&PhyloTree>) -> Result<DatasetTrees> {
    let datasets = corpus.datasets();
    let built: Vec<(String, PhyloTree)> = datasets
        .par_iter()
        .map(|d| {
            let m = model_distance_matrix(corpus, metric, &Scope::Dataset(d.clone()))?;
            Ok((d.clone(), phylo::neighbor_joining(&m)?))
        })
        .collect::<Result<_>>()?;
    let list: Vec<PhyloTree> = built.iter().map(|(_, t)| t.clone()).collect();
    let consensus = phylo::consensus(&list, ConsensusRule::majority())?;
    let (rf, consensus_rf) = match truth {
        Some(t) => {
            let mut rf = BTreeMap::new();
            for (d, tree) in &built {
                rf.insert(d.clone(), phylo::rf_distance(tree, t, RfMode::Unrooted)?);
            }
            (Some(rf), Some(phylo::rf_distance(&consensus, t, RfMode::Unrooted)?))
        }
        None => (None, None),
    };
    Ok(DatasetTrees {
        trees: built.into_iter().collect(),
        consensus,
        rf,
        consensus_rf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcaProjection {
    pub labels: Vec<String>,
    pub coordinates: Vec<[f64; 2]>,
    /// Fraction of total variance captured by PC1 and PC2.
    pub explained: [f64; 2],
    /// Covariance eigenvalues (divisor n - 1).
    pub eigenvalues: [f64; 2],
    pub components: [Vec<f64>; 2],
}

const PCA_TOL: f64 = 1e-12;
const PCA_MAX_ITER: usize = 10_000;

struct Centered {
    rows: Vec<Vec<f64>>,
    scale: f64,
}

impl Centered {
    /// C v = Xᵀ (X v) / (n - 1), without forming C.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for row in &self.rows {
            let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            out.iter_mut().zip(row).for_each(|(o, r)| *o += s * r);
        }
        out.iter_mut().for_each(|o| *o *= self.scale);
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

/// Power iteration orthogonal to `deflate`; returns (eigenvalue, vector).
fn dominant(op: &Centered, deflate: &[Vec<f64>], dim: usize, scale: f64) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + deflate.len() as u64);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    project_out(&mut v, deflate);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITER {
        let mut w = op.apply(&v);
        project_out(&mut w, deflate);
        lambda = dot(&v, &w);
        let residual: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        v = w;
        if residual <= PCA_TOL * scale {
            break;
        }
    }
    (lambda.max(0.0), v)
}

/// Top two principal components by power iteration with deflation, followed
/// by a Rayleigh-Ritz rotation within the two-vector subspace. Each component
/// is signed so that its largest-magnitude loading is positive.
pub fn pca2(labels: &[String], points: &[Vec<f64>]) -> Result<PcaProjection> {
    let n = points.len();
    let dim = points.first().map_or(0, Vec::len);
    if n < 2 || dim < 2 || labels.len() != n {
        return Err(EmbeddingError::TooSmall { points: n, dimension: dim });
    }
    if let Some(p) = points.iter().position(|p| p.len() != dim) {
        return Err(EmbeddingError::DimensionMismatch {
            line: p + 1,
            expected: dim,
            got: points[p].len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let op = Centered {
        scale: 1.0 / (n - 1) as f64,
        rows,
    };
    let trace: f64 = op.rows.iter().flatten().map(|x| x * x).sum::<f64>() * op.scale;
    if trace == 0.0 {
        return Err(EmbeddingError::DegenerateData);
    }

    let (_, v1) = dominant(&op, &[], dim, trace);
    let (_, v2) = dominant(&op, std::slice::from_ref(&v1), dim, trace);

    // Rayleigh-Ritz on span{v1, v2}.
    let (c1, c2) = (op.apply(&v1), op.apply(&v2));
    let (a, b, d) = (dot(&v1, &c1), dot(&v1, &c2), dot(&v2, &c2));
    // Rotation angle via atan2 stays accurate when b is tiny.
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (cos, sin) = (theta.cos(), theta.sin());
    let top = a * cos * cos + 2.0 * b * cos * sin + d * sin * sin;
    let low = a * sin * sin - 2.0 * b * cos * sin + d * cos * cos;
    let rot = |x: f64, y: f64| -> Vec<f64> { v1.iter().zip(&v2).map(|(s, t)| x * s + y * t).collect() };
    let (mut lambdas, mut vecs) = ([top.max(0.0), low.max(0.0)], [rot(cos, sin), rot(-sin, cos)]);
    if lambdas[1] > lambdas[0] {
        lambdas.swap(0, 1);
        vecs.swap(0, 1);
    }
    for v in vecs.iter_mut() {
        normalize(v);
        let lead = v
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()).then(y.0.cmp(&x.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    // A numerically absent second component projects everything to zero.
    let pc2_null = lambdas[1] <= PCA_TOL * trace;
    let coordinates = op
        .rows
        .iter()
        .map(|r| [dot(r, &vecs[0]), if pc2_null { 0.0 } else { dot(r, &vecs[1]) }])
        .collect();
    if pc2_null {
        lambdas[1] = 0.0;
    }
    Ok(PcaProjection {
        labels: labels.to_vec(),
        coordinates,
        explained: [
            (lambdas[0] / trace).clamp(0.0, 1.0),
            (lambdas[1] / trace).clamp(0.0, 1.0),
        ],
        eigenvalues: lambdas,
        components: vecs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, dataset: &str, prompt: &str, run: u32, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            model_id: model.into(),
            dataset_id: dataset.into(),
            prompt_id: prompt.into(),
            run_index: run,
            vector: v.to_vec(),
        }
    }

    #[test]
    fn loads_valid_jsonl() {
        let text = r#"{"model":"a","dataset":"d","prompt":"p","run":0,"embedding":[1,2,3,4]}

{"model":"b","dataset":"d","prompt":"p","run":0,"embedding":[0.5,2,3,4]}
"#;
        let c = Corpus::from_jsonl(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.dimension(), 4);
        assert_eq!(Corpus::from_jsonl(&c.to_jsonl()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_corpora() {
        let text = r#"{"model":"a","dataset":"d","prompt":"p","run":0,"embedding":[1,2,3,4]}
{"model":"b","dataset":"d","prompt":"p","run":0,"embedding":[1,2,3,4,5]}"#;
        assert!(matches!(
            Corpus::from_jsonl(text),
            Err(EmbeddingError::DimensionMismatch { line: 2, expected: 4, got: 5 })
        ));
        let dup = vec![rec("a", "d", "p", 0, &[1.0, 2.0]), rec("a", "d", "p", 0, &[3.0, 4.0])];
        assert!(matches!(Corpus::new(dup), Err(EmbeddingError::DuplicateKey { .. })));
        assert!(matches!(
            Corpus::from_jsonl(r#"{"model":"a","dataset":"d","prompt":"p","run":0,"embedding":[1,"x"]}"#),
            Err(EmbeddingError::Json { line: 1, .. })
        ));
        let inf = vec![rec("a", "d", "p", 0, &[1.0, f64::INFINITY])];
        assert!(matches!(Corpus::new(inf), Err(EmbeddingError::NonFinite { line: 1, index: 1 })));
    }

    #[test]
    fn scope_round_trips() {
        for s in ["global", "dataset:XS", "prompt:XS:p3"] {
            assert_eq!(s.parse::<Scope>().unwrap().to_string(), s);
        }
        assert!("dataset:".parse::<Scope>().is_err());
        assert!("prompt:XS".parse::<Scope>().is_err());
    }

    #[test]
    fn mean_over_cross_pairs() {
        let e = [0.0, 0.0];
        let f = [1.0, 0.0];
        let c = Corpus::new(vec![
            rec("a", "d", "p", 0, &e),
            rec("a", "d", "p", 1, &e),
            rec("b", "d", "p", 0, &f),
            rec("c", "d", "p", 0, &e),
        ])
        .unwrap();
        let m = model_distance_matrix(&c, MetricKind::L2, &Scope::Global).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.source, Source::Embedding("global".into()));
    }

    #[test]
    fn missing_model_in_scope() {
        let c = Corpus::new(vec![
            rec("a", "d1", "p", 0, &[1.0, 0.0]),
            rec("b", "d1", "p", 0, &[0.0, 1.0]),
            rec("b", "d2", "p", 0, &[0.0, 1.0]),
        ])
        .unwrap();
        let err = model_distance_matrix(&c, MetricKind::L1, &Scope::Dataset("d2".into())).unwrap_err();
        assert!(matches!(err, EmbeddingError::MissingModel { ref model, .. } if model == "a"));
    }

    #[test]
    fn collinear_points_have_one_component() {
        let labels: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca2(&labels, &pts).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-9);
        assert_eq!(p.explained[1], 0.0);
        assert!(p.coordinates.iter().all(|c| c[1] == 0.0));
        // leading loading is positive
        assert!(p.components[0][1] > 0.0);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let pts = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert!(matches!(pca2(&labels, &pts), Err(EmbeddingError::DegenerateData)));
        assert!(matches!(
            pca2(&labels[..1], &pts[..1]),
            Err(EmbeddingError::TooSmall { .. })
        ));
    }

    #[test]
    fn axis_aligned_variances() {
        // Variances 4 and 1 along x and y.
        let pts = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let p = pca2(&labels, &pts).unwrap();
        assert!((p.explained[0] - 0.8).abs() < 1e-12);
        assert!((p.explained[1] - 0.2).abs() < 1e-12);
        assert!((p.coordinates[0][0] - 2.0).abs() < 1e-12);
        assert!((p.coordinates[2][1] - 1.0).abs() < 1e-12);
    }
}
