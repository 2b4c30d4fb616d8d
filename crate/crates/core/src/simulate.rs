//! Controlled reconstruction experiment on synthetic genotypes.
//!
//! A training tree is read breadth-first from a configuration: the base model
//! sits at the root, each configuration entry fills the next child slot, and
//! an empty entry leaves its slot vacant. Genotypes are evolved down the tree
//! with a fixed drift direction per dataset plus fresh isotropic noise; trees
//! are then reconstructed from the observed models and scored against the
//! known training tree.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distmat::{self, format_g17, MatrixError};
use crate::metrics::MetricKind;
use crate::phylo::{self, ConsensusRule, PhyloTree, RfMode, TreeError};
use crate::tensor_archive::ModelGenotype;

/// The ten summarization datasets of the reference experiment, abbreviated.
pub const DEFAULT_DATASETS: [&str; 10] = ["BS", "XS", "CD", "AX", "BP", "DS", "GR", "PM", "SS", "DeS"];

/// Expected number of empty entries inserted before each dataset entry.
pub const DEFAULT_LAMBDA: f64 = 0.7;

pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Level-order description of a training tree. `None` entries are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTreeConfig {
    pub datasets: Vec<String>,
    pub entries: Vec<Option<String>>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingNode {
    pub name: String,
    pub dataset: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Training tree with the base model at index 0, nodes in breadth-first order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTree {
    pub nodes: Vec<TrainingNode>,
}

impl TrainingTree {
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty()).collect()
    }

    pub fn depth(&self, mut id: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            d += 1;
            id = p;
        }
        d
    }

    /// Every node labeled with its model name, unit branch lengths.
    pub fn to_phylo(&self) -> PhyloTree {
        let mut tree = PhyloTree::new();
        tree.set_label(tree.root(), self.nodes[0].name.clone());
        let mut ids = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().skip(1) {
            let parent = ids[node.parent.expect("non-root has a parent")];
            ids[i] = tree.add_leaf(parent, node.name.clone(), Some(1.0));
        }
        tree
    }
}

impl TrainingTreeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        for ds in cfg.entries.iter().flatten() {
            if !cfg.datasets.contains(ds) {
                return Err(SimError::InvalidConfig(format!("entry `{ds}` is not a listed dataset")));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Reads the entries as a breadth-first binary tree. Children of empty
    /// entries are never created; entries left when no open slot remains are
    /// dropped.
    pub fn training_tree(&self) -> TrainingTree {
        let mut nodes = vec![TrainingNode {
            name: "n0-base".into(),
            dataset: None,
            parent: None,
            children: Vec::new(),
        }];
        let mut queue = VecDeque::from([0usize]);
        let mut entries = self.entries.iter();
        'outer: while let Some(parent) = queue.pop_front() {
            for _ in 0..2 {
                let Some(entry) = entries.next() else {
                    break 'outer;
                };
                if let Some(ds) = entry {
                    let id = nodes.len();
                    nodes.push(TrainingNode {
                        name: format!("n{id}-{ds}"),
                        dataset: Some(ds.clone()),
                        parent: Some(parent),
                        children: Vec::new(),
                    });
                    nodes[parent].children.push(id);
                    queue.push_back(id);
                }
            }
        }
        TrainingTree { nodes }
    }
}

/// Builds a configuration: datasets (optionally shuffled), each preceded by
/// a Poisson(`lambda`) number of empty entries.
pub fn generate_config<S: AsRef<str>>(base: &[S], permute: bool, lambda: f64, seed: u64) -> Result<TrainingTreeConfig> {
    if base.is_empty() {
        return Err(SimError::InvalidParams("need at least one dataset".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SimError::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let datasets: Vec<String> = base.iter().map(|s| s.as_ref().to_string()).collect();
    let mut order = datasets.clone();
    if permute {
        order.shuffle(&mut rng);
    }
    let poisson = (lambda > 0.0).then(|| Poisson::new(lambda).expect("lambda > 0"));
    let mut entries = Vec::new();
    for ds in order {
        let empties = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        entries.extend(std::iter::repeat_n(None, empties));
        entries.push(Some(ds));
    }
    Ok(TrainingTreeConfig {
        datasets,
        entries,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub layer_sizes: Vec<usize>,
    /// Length of the per-dataset drift step.
    pub drift_scale: f64,
    /// Scale of the isotropic per-child noise (unit expected squared norm).
    pub noise_scale: f64,
    pub seed: u64,
}

impl EvolutionParams {
    pub fn uniform(layer_count: usize, layer_size: usize, drift_scale: f64, noise_scale: f64, seed: u64) -> Self {
        Self {
            layer_sizes: vec![layer_size; layer_count],
            drift_scale,
            noise_scale,
            seed,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len()
    }

    fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(SimError::InvalidParams("layers must be non-empty".into()));
        }
        for (name, v) in [("drift_scale", self.drift_scale), ("noise_scale", self.noise_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn dimension(&self) -> usize {
        self.layer_sizes.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct EvolvedModel {
    pub genotype: ModelGenotype,
    pub dataset: Option<String>,
    pub is_leaf: bool,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    /// Training tree with every node labeled, unit branch lengths.
    pub truth: PhyloTree,
    pub models: Vec<EvolvedModel>,
}

fn layer_name(k: usize) -> String {
    format!("layer.{k:03}")
}

fn split_layers(id: &str, flat: &[f64], sizes: &[usize]) -> ModelGenotype {
    let mut g = ModelGenotype::new(id);
    let mut start = 0;
    for (k, &s) in sizes.iter().enumerate() {
        g.layers.insert(layer_name(k), flat[start..start + s].to_vec());
        start += s;
    }
    g
}

/// Unit-norm direction for a dataset, fixed by the dataset id and seed.
pub fn dataset_direction(dataset: &str, seed: u64, dimension: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(dataset.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Evolves genotypes down the training tree:
/// `child = parent + drift · u(dataset) + noise · g`, where `g` has i.i.d.
/// N(0, 1/D) entries over the D weights.
pub fn evolve(config: &TrainingTreeConfig, params: &EvolutionParams) -> Result<Evolution> {
    params.validate()?;
    let tree = config.training_tree();
    let dim = params.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let root: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let noise = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite sd");

    let mut directions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut flats: Vec<Vec<f64>> = Vec::with_capacity(tree.nodes.len());
    flats.push(root);
    for node in &tree.nodes[1..] {
        let ds = node.dataset.as_deref().expect("non-root nodes carry a dataset");
        let u = directions
            .entry(ds)
            .or_insert_with(|| dataset_direction(ds, params.seed, dim));
        let parent = &flats[node.parent.expect("non-root has a parent")];
        let child: Vec<f64> = parent
            .iter()
            .zip(u.iter())
            .map(|(&p, &d)| p + params.drift_scale * d + params.noise_scale * noise.sample(&mut rng))
            .collect();
        flats.push(child);
    }

    let models = tree
        .nodes
        .iter()
        .zip(&flats)
        .enumerate()
        .map(|(i, (node, flat))| EvolvedModel {
            genotype: split_layers(&node.name, flat, &params.layer_sizes),
            dataset: node.dataset.clone(),
            is_leaf: node.children.is_empty(),
            depth: tree.depth(i),
        })
        .collect();
    Ok(Evolution {
        truth: tree.to_phylo(),
        models,
    })
}

/// Models that share a base and differ per layer by Gaussian noise of the
/// given scale; layer `k` is named `layer.{k:03}`.
pub fn layer_noise_models(scales: &[f64], layer_size: usize, count: usize, seed: u64) -> Vec<ModelGenotype> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Vec<f64>> = scales
        .iter()
        .map(|_| (0..layer_size).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    (0..count)
        .map(|i| {
            let mut g = ModelGenotype::new(format!("m{i}"));
            for (k, (&s, b)) in scales.iter().zip(&base).enumerate() {
                let v = b
                    .iter()
                    .map(|&x| x + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                g.layers.insert(layer_name(k), v);
            }
            g
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSelection {
    /// Reconstruct from leaf models only.
    #[default]
    Leaves,
    /// Reconstruct from every model, internal ones included.
    All,
}

impl std::str::FromStr for NodeSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "leaves" => Ok(NodeSelection::Leaves),
            "all" => Ok(NodeSelection::All),
            other => Err(format!("unknown node selection `{other}` (expected leaves or all)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub runs: usize,
    pub layer_sizes: Vec<usize>,
    pub drift_scale: f64,
    pub noise_scale: f64,
    pub metrics: Vec<MetricKind>,
    pub nodes: NodeSelection,
    pub trials: usize,
    pub seed: u64,
    pub datasets: Vec<String>,
    pub lambda: f64,
    pub permute: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            runs: 50,
            layer_sizes: vec![1000; 10],
            drift_scale: 1.0,
            noise_scale: 0.05,
            metrics: MetricKind::all().to_vec(),
            nodes: NodeSelection::Leaves,
            trials: DEFAULT_TRIALS,
            seed: 0,
            datasets: DEFAULT_DATASETS.iter().map(|s| s.to_string()).collect(),
            lambda: DEFAULT_LAMBDA,
            permute: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub config_seed: u64,
    pub leaf_count: usize,
    /// Number of models the tree was reconstructed from.
    pub node_count: usize,
    pub metric: String,
    pub total_rf: usize,
    pub consensus_rf: usize,
    /// Percentage of per-layer trees with RF 0 to the truth.
    pub match_pct: f64,
    pub random_lt_consensus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub leaf_count: usize,
    /// Mean number of models reconstructed from (equals `leaf_count` for leaves-only runs).
    pub node_count_mean: f64,
    pub runs: usize,
    pub metric: String,
    pub total_rf_mean: f64,
    pub total_rf_sd: Option<f64>,
    pub consensus_rf_mean: f64,
    pub consensus_rf_sd: Option<f64>,
    pub match_pct_mean: f64,
    pub random_lt_consensus_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    /// Runs whose training tree had fewer than three observable models.
    pub skipped: Vec<usize>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; undefined for a single value.
fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl SimulationReport {
    fn from_records(records: Vec<RunRecord>, skipped: Vec<usize>, metric_order: &[String]) -> Self {
        let mut groups: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
        for r in &records {
            let m = metric_order.iter().position(|m| *m == r.metric).unwrap_or(usize::MAX);
            groups.entry((r.leaf_count, m)).or_default().push(r);
        }
        let aggregates = groups
            .into_values()
            .map(|rs| {
                let total: Vec<f64> = rs.iter().map(|r| r.total_rf as f64).collect();
                let cons: Vec<f64> = rs.iter().map(|r| r.consensus_rf as f64).collect();
                let matches: Vec<f64> = rs.iter().map(|r| r.match_pct).collect();
                let random: Vec<f64> = rs.iter().map(|r| r.random_lt_consensus).collect();
                let nodes: Vec<f64> = rs.iter().map(|r| r.node_count as f64).collect();
                AggregateRow {
                    leaf_count: rs[0].leaf_count,
                    node_count_mean: mean(&nodes),
                    runs: rs.len(),
                    metric: rs[0].metric.clone(),
                    total_rf_mean: mean(&total),
                    total_rf_sd: sample_sd(&total),
                    consensus_rf_mean: mean(&cons),
                    consensus_rf_sd: sample_sd(&cons),
                    match_pct_mean: mean(&matches),
                    random_lt_consensus_mean: mean(&random),
                }
            })
            .collect();
        Self {
            records,
            aggregates,
            skipped,
        }
    }

    /// Aggregate table mirroring the reference results layout.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "# match_pct = percentage of per-layer trees with RF 0 to the training tree; sd = sample standard deviation (NA for one run)\n",
        );
        out.push_str(
            "leaves,nodes,n,metric,total_rf_mean,total_rf_sd,consensus_rf_mean,consensus_rf_sd,match_pct,random_lt_consensus\n",
        );
        let sd = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), format_g17);
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                a.leaf_count,
                format_g17(a.node_count_mean),
                a.runs,
                a.metric,
                format_g17(a.total_rf_mean),
                sd(a.total_rf_sd),
                format_g17(a.consensus_rf_mean),
                sd(a.consensus_rf_sd),
                format_g17(a.match_pct_mean),
                format_g17(a.random_lt_consensus_mean),
            ));
        }
        out
    }

    /// One JSON object per run and metric.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Seed for sub-task `tag` of a run, independent of execution order.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

const EVOLVE_STREAM: u64 = 1;
const PERMUTATION_STREAM: u64 = 2;

/// Observed models and the matching truth tree for one run.
fn observations(evo: &Evolution, nodes: NodeSelection) -> (Vec<ModelGenotype>, PhyloTree) {
    match nodes {
        NodeSelection::Leaves => {
            let models = evo
                .models
                .iter()
                .filter(|m| m.is_leaf)
                .map(|m| m.genotype.clone())
                .collect();
            (models, evo.truth.clone())
        }
        NodeSelection::All => {
            let models = evo.models.iter().map(|m| m.genotype.clone()).collect();
            (models, evo.truth.with_internal_labels_as_leaves())
        }
    }
}

fn score_metric(
    metric: MetricKind,
    models: &[ModelGenotype],
    truth: &PhyloTree,
    trials: usize,
    perm_seed: u64,
) -> Result<(usize, usize, f64, f64)> {
    let total = distmat::build_total(metric, models)?;
    let total_rf = phylo::rf_distance(&phylo::neighbor_joining(&total)?, truth, RfMode::Unrooted)?;

    let layer_trees = distmat::build_per_layer(metric, models)?
        .iter()
        .map(phylo::neighbor_joining)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut exact = 0usize;
    for t in &layer_trees {
        if phylo::rf_distance(t, truth, RfMode::Unrooted)? == 0 {
            exact += 1;
        }
    }
    let match_pct = 100.0 * exact as f64 / layer_trees.len() as f64;
    let cons = phylo::consensus(&layer_trees, ConsensusRule::majority())?;
    let consensus_rf = phylo::rf_distance(&cons, truth, RfMode::Unrooted)?;
    let random = phylo::permutation_test(&cons, truth, trials, perm_seed)?;
    Ok((total_rf, consensus_rf, match_pct, random))
}

/// Runs the experiment on explicit configurations. Per-run randomness flows
/// from each config's seed, so results do not depend on scheduling.
pub fn run_configs(configs: &[TrainingTreeConfig], opts: &ExperimentOptions) -> Result<SimulationReport> {
    if opts.metrics.is_empty() {
        return Err(SimError::InvalidParams("no metrics selected".into()));
    }
    if opts.trials == 0 {
        return Err(SimError::InvalidParams("trials must be positive".into()));
    }
    let per_run: Vec<Option<Vec<RunRecord>>> = configs
        .par_iter()
        .enumerate()
        .map(|(run, cfg)| -> Result<Option<Vec<RunRecord>>> {
            let params = EvolutionParams {
                layer_sizes: opts.layer_sizes.clone(),
                drift_scale: opts.drift_scale,
                noise_scale: opts.noise_scale,
                seed: derive_seed(cfg.seed, EVOLVE_STREAM),
            };
            let evo = evolve(cfg, &params)?;
            let leaf_count = evo.models.iter().filter(|m| m.is_leaf).count();
            let (models, truth) = observations(&evo, opts.nodes);
            if leaf_count < 3 || models.len() < 3 {
                return Ok(None);
            }
            let perm_seed = derive_seed(cfg.seed, PERMUTATION_STREAM);
            opts.metrics
                .iter()
                .map(|&metric| {
                    let (total_rf, consensus_rf, match_pct, random) =
                        score_metric(metric, &models, &truth, opts.trials, perm_seed)?;
                    Ok(RunRecord {
                        run,
                        config_seed: cfg.seed,
                        leaf_count,
                        node_count: models.len(),
                        metric: metric.family().to_string(),
                        total_rf,
                        consensus_rf,
                        match_pct,
                        random_lt_consensus: random,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (run, r) in per_run.into_iter().enumerate() {
        match r {
            Some(rs) => records.extend(rs),
            None => skipped.push(run),
        }
    }
    let order: Vec<String> = opts.metrics.iter().map(|m| m.family().to_string()).collect();
    Ok(SimulationReport::from_records(records, skipped, &order))
}

/// The `opts.runs` configurations `run_experiment` uses; run `r` is seeded
/// from stream `r` of `opts.seed`.
pub fn random_configs(opts: &ExperimentOptions) -> Result<Vec<TrainingTreeConfig>> {
    if opts.runs == 0 {
        return Err(SimError::InvalidParams("need at least one run".into()));
    }
    (0..opts.runs)
        .map(|run| generate_config(&opts.datasets, opts.permute, opts.lambda, derive_seed(opts.seed, run as u64)))
        .collect()
}

/// Generates `opts.runs` random configurations and runs the experiment.
pub fn run_experiment(opts: &ExperimentOptions) -> Result<SimulationReport> {
    run_configs(&random_configs(opts)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    fn names(tree: &TrainingTree) -> Vec<String> {
        tree.nodes.iter().map(|n| n.name.clone()).collect()
    }

    #[test]
    fn no_truncation_gives_left_complete_tree() {
        let cfg = generate_config(&["a", "b", "c"], false, 0.0, 1).unwrap();
        assert_eq!(cfg.entries, vec![Some("a".into()), Some("b".into()), Some("c".into())]);
        let t = cfg.training_tree();
        assert_eq!(names(&t), vec!["n0-base", "n1-a", "n2-b", "n3-c"]);
        assert_eq!(t.nodes[0].children, vec![1, 2]);
        assert_eq!(t.nodes[1].children, vec![3]);
        assert_eq!(t.leaves(), vec![2, 3]);
    }

    #[test]
    fn empty_entries_terminate_branches() {
        let cfg = TrainingTreeConfig {
            datasets: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            entries: vec![None, Some("a".into()), Some("b".into()), None, Some("c".into()), Some("d".into())],
            seed: 0,
        };
        let t = cfg.training_tree();
        // root -> [_, a]; a -> [b, _]; b -> [c, d]
        assert_eq!(t.nodes[0].children, vec![1]);
        assert_eq!(t.nodes[1].children, vec![2]);
        assert_eq!(t.nodes[2].children, vec![3, 4]);
        assert_eq!(t.leaves(), vec![3, 4]);
        assert_eq!(t.depth(4), 3);
        // leftover entries without an open slot are dropped
        let cfg = TrainingTreeConfig {
            datasets: vec!["a".into()],
            entries: vec![None, None, Some("a".into())],
            seed: 0,
        };
        assert_eq!(cfg.training_tree().nodes.len(), 1);
    }

    #[test]
    fn config_is_seeded_and_json_round_trips() {
        let a = generate_config(&DEFAULT_DATASETS, true, DEFAULT_LAMBDA, 9).unwrap();
        assert_eq!(a, generate_config(&DEFAULT_DATASETS, true, DEFAULT_LAMBDA, 9).unwrap());
        assert_eq!(TrainingTreeConfig::from_json(&a.to_json()).unwrap(), a);
        assert_eq!(a.entries.iter().flatten().count(), 10);
        let bad = r#"{"datasets":["a"],"entries":["b"],"seed":1}"#;
        assert!(TrainingTreeConfig::from_json(bad).is_err());
    }

    #[test]
    fn poisson_empty_count_mean() {
        let mut total = 0usize;
        let seeds = 10_000u64;
        for s in 0..seeds {
            let cfg = generate_config(&DEFAULT_DATASETS, true, 0.7, s).unwrap();
            total += cfg.entries.iter().filter(|e| e.is_none()).count();
        }
        let per_slot = total as f64 / (seeds as f64 * 10.0);
        assert!((per_slot - 0.7).abs() < 0.03, "{per_slot}");
    }

    fn two_children() -> TrainingTreeConfig {
        TrainingTreeConfig {
            datasets: vec!["x".into(), "y".into()],
            entries: vec![Some("x".into()), Some("y".into())],
            seed: 0,
        }
    }

    #[test]
    fn noiseless_children_separate_by_drift() {
        let params = EvolutionParams::uniform(3, 50, 2.5, 0.0, 4);
        let evo = evolve(&two_children(), &params).unwrap();
        let (a, b) = (&evo.models[1].genotype, &evo.models[2].genotype);
        let got = metrics::total_distance(MetricKind::L2, a, b).unwrap();
        let (u1, u2) = (dataset_direction("x", 4, 150), dataset_direction("y", 4, 150));
        let expected = 2.5 * metrics::distance(MetricKind::L2, &u1, &u2).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn no_drift_no_noise_means_identical_models() {
        let cfg = generate_config(&DEFAULT_DATASETS, true, 0.7, 3).unwrap();
        let evo = evolve(&cfg, &EvolutionParams::uniform(2, 10, 0.0, 0.0, 1)).unwrap();
        let gs: Vec<_> = evo.models.iter().map(|m| m.genotype.clone()).collect();
        if gs.len() >= 3 {
            let d = distmat::build_total(MetricKind::L1, &gs).unwrap();
            assert!(d.values().iter().all(|&v| v == 0.0));
        }
        for g in &gs[1..] {
            assert_eq!(g.layers, gs[0].layers);
        }
    }

    #[test]
    fn truth_mirrors_config() {
        let cfg = generate_config(&["a", "b", "c", "d"], false, 0.0, 0).unwrap();
        let evo = evolve(&cfg, &EvolutionParams::uniform(1, 4, 1.0, 0.0, 0)).unwrap();
        let want = crate::phylo::parse_newick("((n3-c:1,n4-d:1)n1-a:1,n2-b:1)n0-base;").unwrap();
        assert_eq!(evo.truth.to_newick(), want.to_newick());
        assert_eq!(evo.truth.leaf_labels(), vec!["n2-b", "n3-c", "n4-d"]);
        assert!(evo.models[3].is_leaf && evo.models[4].is_leaf && evo.models[2].is_leaf);
    }

    #[test]
    fn rejects_bad_params() {
        let cfg = two_children();
        assert!(evolve(&cfg, &EvolutionParams::uniform(1, 4, -1.0, 0.0, 0)).is_err());
        assert!(evolve(&cfg, &EvolutionParams::uniform(0, 4, 1.0, 0.0, 0)).is_err());
        assert!(generate_config::<&str>(&[], false, 0.7, 0).is_err());
        assert!(generate_config(&["a"], false, -0.1, 0).is_err());
    }

    #[test]
    fn layer_noise_models_scale_by_layer() {
        let ms = layer_noise_models(&[3.0, 0.0], 20, 3, 1);
        assert_eq!(ms.len(), 3);
        assert_eq!(ms[0].layers["layer.001"], ms[1].layers["layer.001"]);
        assert_ne!(ms[0].layers["layer.000"], ms[1].layers["layer.000"]);
    }

    #[test]
    fn small_experiment_is_deterministic_and_bounded() {
        let opts = ExperimentOptions {
            runs: 4,
            layer_sizes: vec![40; 3],
            trials: 50,
            seed: 11,
            ..Default::default()
        };
        let a = run_experiment(&opts).unwrap();
        let b = run_experiment(&opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        for r in &a.records {
            assert!((0.0..=1.0).contains(&r.random_lt_consensus));
            assert!((0.0..=100.0).contains(&r.match_pct));
            assert!(r.leaf_count >= 3);
        }
        assert_eq!(a.records.len() + a.skipped.len() * 5, 4 * 5);
        let jsonl = a.to_jsonl();
        assert_eq!(jsonl.lines().count(), a.records.len());
    }
}
