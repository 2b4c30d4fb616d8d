use phylotrace::distmat;
use phylotrace::metrics::MetricKind;
use phylotrace::phylo::{self, RfMode};
use phylotrace::simulate::{self, EvolutionParams, ExperimentOptions, NodeSelection, TrainingTreeConfig, DEFAULT_DATASETS};

fn configs_with_leaves(want: impl Fn(usize) -> bool, count: usize) -> Vec<TrainingTreeConfig> {
    (0u64..)
        .map(|s| simulate::generate_config(&DEFAULT_DATASETS, true, 0.7, s).unwrap())
        .filter(|c| want(c.training_tree().leaves().len()))
        .take(count)
        .collect()
}

fn small_opts() -> ExperimentOptions {
    ExperimentOptions {
        layer_sizes: vec![200; 5],
        trials: 200,
        ..Default::default()
    }
}

#[test]
fn noiseless_four_leaf_runs_are_exact() {
    let configs = configs_with_leaves(|n| n == 4, 5);
    let opts = ExperimentOptions {
        noise_scale: 0.0,
        ..small_opts()
    };
    let report = simulate::run_configs(&configs, &opts).unwrap();
    assert_eq!(report.records.len(), 5 * 5);
    for r in &report.records {
        assert_eq!(r.consensus_rf, 0, "{r:?}");
        assert_eq!(r.random_lt_consensus, 0.0);
    }
    for a in &report.aggregates {
        assert_eq!(a.consensus_rf_mean, 0.0);
        assert_eq!(a.consensus_rf_sd, Some(0.0));
    }
}

#[test]
fn single_run_is_bit_identical() {
    let opts = ExperimentOptions {
        runs: 1,
        seed: 5,
        ..small_opts()
    };
    let a = simulate::run_experiment(&opts).unwrap();
    let b = simulate::run_experiment(&opts).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    // a single run has no sample deviation
    assert!(a.aggregates.iter().all(|x| x.total_rf_sd.is_none()));
    assert!(a.to_csv_string().contains(",NA,") || !a.skipped.is_empty());
}

#[test]
fn parallel_and_serial_agree() {
    let opts = ExperimentOptions {
        runs: 6,
        seed: 3,
        ..small_opts()
    };
    let parallel = simulate::run_experiment(&opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| simulate::run_experiment(&opts).unwrap());
    assert_eq!(parallel, serial);
}

#[test]
fn drift_dominant_total_l2_recovers_six_leaf_trees() {
    // lambda = 0 over ten datasets gives a left-complete tree with 6 leaves.
    let mut exact = 0;
    for seed in 0..50u64 {
        let cfg = simulate::generate_config(&DEFAULT_DATASETS, true, 0.0, seed).unwrap();
        assert_eq!(cfg.training_tree().leaves().len(), 6);
        let evo = simulate::evolve(&cfg, &EvolutionParams::uniform(10, 100, 1.0, 0.05, seed)).unwrap();
        let leaves: Vec<_> = evo.models.iter().filter(|m| m.is_leaf).map(|m| m.genotype.clone()).collect();
        let d = distmat::build_total(MetricKind::L2, &leaves).unwrap();
        let tree = phylo::neighbor_joining(&d).unwrap();
        if phylo::rf_distance(&tree, &evo.truth, RfMode::Unrooted).unwrap() == 0 {
            exact += 1;
        }
    }
    assert!(exact >= 45, "{exact}/50");
}

#[test]
fn match_pct_does_not_grow_with_noise() {
    let configs = configs_with_leaves(|n| (4..=6).contains(&n), 10);
    let mut previous = f64::INFINITY;
    for noise in [0.05, 1.0, 4.0] {
        let opts = ExperimentOptions {
            noise_scale: noise,
            metrics: vec![MetricKind::L2],
            ..small_opts()
        };
        let report = simulate::run_configs(&configs, &opts).unwrap();
        let mean = report.records.iter().map(|r| r.match_pct).sum::<f64>() / report.records.len() as f64;
        assert!(mean <= previous, "noise {noise}: {mean} > {previous}");
        previous = mean;
    }
}

#[test]
fn all_nodes_inflate_single_tree_rf() {
    let configs = configs_with_leaves(|n| (3..=6).contains(&n), 20);
    let base = ExperimentOptions {
        metrics: vec![MetricKind::L2, MetricKind::Cosine],
        ..small_opts()
    };
    let leaves = simulate::run_configs(&configs, &base).unwrap();
    let all = simulate::run_configs(
        &configs,
        &ExperimentOptions {
            nodes: NodeSelection::All,
            ..base.clone()
        },
    )
    .unwrap();
    let mean = |r: &simulate::SimulationReport| {
        r.records.iter().map(|x| x.total_rf as f64).sum::<f64>() / r.records.len() as f64
    };
    assert!(mean(&all) > mean(&leaves));
    assert!(all.records.iter().all(|r| r.node_count > r.leaf_count));
}

#[test]
fn config_file_round_trip() {
    let text = r#"{"datasets":["a","b","c"],"entries":[null,"a","b",null,"c"],"seed":4}"#;
    let cfg = TrainingTreeConfig::from_json(text).unwrap();
    assert_eq!(cfg.entries[0], None);
    let tree = cfg.training_tree();
    // root -> [_, a]; a -> [b, _]; b -> [c]
    assert_eq!(tree.nodes.len(), 4);
    assert_eq!(tree.leaves(), vec![3]);
    assert!(TrainingTreeConfig::from_json("{\"datasets\":[]}").is_err());
}
