use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use phylotrace::distmat::{self, format_g17, DistanceMatrix};
use phylotrace::embeddings::{self, Corpus, Scope};
use phylotrace::importance;
use phylotrace::phylo::{self, PhyloTree};
use phylotrace::simulate::{self, ExperimentOptions, TrainingTreeConfig, DEFAULT_DATASETS};
use phylotrace::tensor_archive;
use phylotrace::ModelGenotype;

use crate::manifest::{OutputDir, RunManifest};
use crate::{render, usage, ConsensusArgs, DistancesArgs, EmbedArgs, Format, LayersArgs, PcaArgs, PermtestArgs, RfArgs, SimulateArgs, TreeArgs};

fn require_files(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

fn open_output(
    out_dir: Option<&Path>,
    subcommand: &str,
    options: &impl Serialize,
    inputs: &[PathBuf],
    seed: Option<u64>,
) -> Result<Option<OutputDir>> {
    out_dir
        .map(|dir| OutputDir::create(dir, RunManifest::new(subcommand, options, inputs, seed)?))
        .transpose()
}

fn matrix_json(m: &DistanceMatrix) -> serde_json::Value {
    let n = m.len();
    json!({
        "metric": m.metric.to_string(),
        "source": m.source.to_string(),
        "labels": m.labels(),
        "values": (0..n).map(|i| m.row(i).to_vec()).collect::<Vec<_>>(),
    })
}

fn to_json_line(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn model_id(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| usage(format!("cannot derive a model id from {}", path.display())))
}

fn load_models(inputs: &[PathBuf], min: usize) -> Result<Vec<ModelGenotype>> {
    if inputs.len() < min {
        return Err(usage(format!("need at least {min} archives, got {}", inputs.len())));
    }
    require_files(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut ids = std::collections::BTreeSet::new();
    for p in inputs {
        let id = model_id(p)?;
        if !ids.insert(id.clone()) {
            return Err(usage(format!("duplicate model id `{id}` (file stems must be unique)")));
        }
    }
    inputs
        .iter()
        .map(|p| {
            let archive = tensor_archive::read_archive(p).with_context(|| format!("tensor_archive: {}", p.display()))?;
            archive
                .to_genotype(model_id(p)?)
                .with_context(|| format!("tensor_archive: {}", p.display()))
        })
        .collect()
}

pub fn distances(a: &DistancesArgs, out: &mut impl Write) -> Result<()> {
    if a.per_layer && a.out_dir.is_none() {
        return Err(usage("--per-layer requires --out-dir"));
    }
    let models = load_models(&a.inputs, 3)?;
    let total = distmat::build_total(a.metric, &models).context("distmat")?;
    let mut dir = open_output(a.out_dir.as_deref(), "distances", a, &a.inputs, None)?;
    if let Some(dir) = dir.as_mut() {
        dir.write("total.csv", total.to_csv_string()?)?;
        if a.per_layer {
            let layers = distmat::build_per_layer(a.metric, &models).context("distmat")?;
            let mut index = String::from("file,layer\n");
            for (k, m) in layers.iter().enumerate() {
                let name = format!("layers/{:04}.csv", k + 1);
                if let distmat::Source::Layer(layer) = &m.source {
                    index.push_str(&format!("{name},{layer}\n"));
                }
                dir.write(&name, m.to_csv_string()?)?;
            }
            dir.write("layers/index.csv", index)?;
        }
    }
    match a.format {
        Format::Csv => out.write_all(total.to_csv_string()?.as_bytes())?,
        Format::Json => out.write_all(to_json_line(&matrix_json(&total))?.as_bytes())?,
    }
    if let Some(dir) = dir {
        dir.finish()?;
    }
    Ok(())
}

pub fn tree(a: &TreeArgs, out: &mut impl Write) -> Result<()> {
    if (a.svg || a.dot) && a.out_dir.is_none() {
        return Err(usage("--svg and --dot require --out-dir"));
    }
    require_files(&[&a.matrix])?;
    let m = distmat::read_matrix(&a.matrix).with_context(|| format!("distmat: {}", a.matrix.display()))?;
    let t = phylo::neighbor_joining(&m).context("phylo")?;
    let newick = t.to_newick();
    writeln!(out, "{newick}")?;
    if a.ascii {
        out.write_all(render::ascii_tree(&t).as_bytes())?;
    }
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "tree", a, std::slice::from_ref(&a.matrix), None)? {
        dir.write("tree.nwk", format!("{newick}\n"))?;
        if a.svg {
            dir.write("tree.svg", render::svg_tree(&t))?;
        }
        if a.dot {
            dir.write("tree.dot", render::dot_tree(&t))?;
        }
        dir.finish()?;
    }
    Ok(())
}

/// Splits text into `;`-terminated Newick strings, respecting quotes and
/// bracket comments.
pub fn split_newick(text: &str) -> Vec<String> {
    let mut trees = Vec::new();
    let mut cur = String::new();
    let (mut quoted, mut comment) = (false, false);
    for c in text.chars() {
        cur.push(c);
        match c {
            '\'' if !comment => quoted = !quoted,
            '[' if !quoted => comment = true,
            ']' if !quoted => comment = false,
            ';' if !quoted && !comment => {
                trees.push(std::mem::take(&mut cur).trim().to_string());
            }
            _ => {}
        }
    }
    if !cur.trim().is_empty() {
        trees.push(cur.trim().to_string());
    }
    trees
}

fn read_trees(path: &Path) -> Result<Vec<PhyloTree>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    split_newick(&text)
        .iter()
        .map(|s| phylo::parse_newick(s).with_context(|| format!("newick: {}", path.display())))
        .collect()
}

fn read_single_tree(path: &Path) -> Result<PhyloTree> {
    require_files(&[path])?;
    let mut trees = read_trees(path)?;
    if trees.len() != 1 {
        return Err(usage(format!("{} holds {} trees, expected one", path.display(), trees.len())));
    }
    Ok(trees.remove(0))
}

pub fn consensus(a: &ConsensusArgs, out: &mut impl Write) -> Result<()> {
    require_files(&a.inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut trees = Vec::new();
    for p in &a.inputs {
        trees.extend(read_trees(p)?);
    }
    let c = phylo::consensus(&trees, a.rule).context("phylo")?;
    let newick = c.to_newick();
    writeln!(out, "{newick}")?;
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "consensus", a, &a.inputs, None)? {
        dir.write("consensus.nwk", format!("{newick}\n"))?;
        dir.finish()?;
    }
    Ok(())
}

pub fn rf(a: &RfArgs, out: &mut impl Write) -> Result<()> {
    let (x, y) = (read_single_tree(&a.first)?, read_single_tree(&a.second)?);
    let d = phylo::rf_distance(&x, &y, a.mode).context("phylo")?;
    match a.format {
        Format::Csv => writeln!(out, "{d}")?,
        Format::Json => out.write_all(to_json_line(&json!({"rf": d, "mode": a.mode}))?.as_bytes())?,
    }
    Ok(())
}

pub fn permtest(a: &PermtestArgs, out: &mut impl Write) -> Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let (est, truth) = (read_single_tree(&a.estimated)?, read_single_tree(&a.truth)?);
    let observed = phylo::rf_distance(&est, &truth, a.mode).context("phylo")?;
    let f = phylo::permutation_test_with_mode(&est, &truth, a.trials, a.seed, a.mode).context("phylo")?;
    match a.format {
        Format::Csv => writeln!(out, "{f:?}")?,
        Format::Json => out.write_all(
            to_json_line(&json!({
                "fraction": f,
                "observed_rf": observed,
                "trials": a.trials,
                "seed": a.seed,
                "mode": a.mode,
            }))?
            .as_bytes(),
        )?,
    }
    Ok(())
}

pub fn layers(a: &LayersArgs, out: &mut impl Write) -> Result<()> {
    if a.top == Some(0) || a.bottom == Some(0) {
        return Err(usage("--top/--bottom must be positive"));
    }
    let models = load_models(&a.inputs, 2)?;
    let report = importance::rank_layers(a.metric, &models).context("importance")?;
    let shown = match (a.top, a.bottom) {
        (Some(k), _) => report.top(k),
        (_, Some(k)) => report.bottom(k),
        _ => &report.rows[..],
    };
    let view = importance::LayerImportanceReport {
        metric: report.metric,
        pairs: report.pairs,
        rows: shown.to_vec(),
    };
    if let Some((lo, hi)) = report.magnitude_range() {
        eprintln!("layer mean distance ranges from {} to {} ({})", format_g17(lo), format_g17(hi), a.metric);
    }
    match a.format {
        Format::Csv => out.write_all(view.to_csv_string().as_bytes())?,
        Format::Json => out.write_all(to_json_line(&view)?.as_bytes())?,
    }
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "layers", a, &a.inputs, None)? {
        dir.write("report.csv", report.to_csv_string())?;
        let bars = report.top(a.top.unwrap_or(10));
        let title = format!("Top {} layers by mean pairwise {} distance", bars.len(), a.metric);
        dir.write("top.svg", render::svg_bars(bars, &title))?;
        dir.finish()?;
    }
    Ok(())
}

fn read_configs(paths: &[PathBuf]) -> Result<Vec<TrainingTreeConfig>> {
    require_files(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let mut configs = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("simulate: {}: {e}", p.display())))?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            other => vec![other],
        };
        for item in items {
            let cfg = TrainingTreeConfig::from_json(&item.to_string())
                .map_err(|e| usage(format!("simulate: {}: {e}", p.display())))?;
            configs.push(cfg);
        }
    }
    Ok(configs)
}

pub fn simulate(a: &SimulateArgs, out: &mut impl Write) -> Result<()> {
    if a.layers == 0 || a.layer_size == 0 {
        return Err(usage("--layers and --layer-size must be positive"));
    }
    if a.trials == 0 || a.random == Some(0) {
        return Err(usage("--trials and --random must be positive"));
    }
    for (name, v) in [("--drift", a.drift), ("--noise", a.noise), ("--lambda", a.lambda)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(usage(format!("{name} must be a finite value >= 0")));
        }
    }
    let opts = ExperimentOptions {
        runs: a.random.unwrap_or(0),
        layer_sizes: vec![a.layer_size; a.layers],
        drift_scale: a.drift,
        noise_scale: a.noise,
        metrics: a.metrics.clone(),
        nodes: a.nodes,
        trials: a.trials,
        seed: a.seed,
        datasets: DEFAULT_DATASETS.iter().map(|s| s.to_string()).collect(),
        lambda: a.lambda,
        permute: !a.no_permute,
    };
    let configs = match a.random {
        Some(_) => simulate::random_configs(&opts).context("simulate")?,
        None => read_configs(&a.config)?,
    };
    let report = simulate::run_configs(&configs, &opts).context("simulate")?;
    if !report.skipped.is_empty() {
        eprintln!(
            "{} of {} runs skipped (fewer than 3 observed models)",
            report.skipped.len(),
            configs.len()
        );
    }
    match a.format {
        Format::Csv => out.write_all(report.to_csv_string().as_bytes())?,
        Format::Json => out.write_all(to_json_line(&report.aggregates)?.as_bytes())?,
    }
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "simulate", a, &a.config, Some(a.seed))? {
        dir.write("report.csv", report.to_csv_string())?;
        dir.write("runs.jsonl", report.to_jsonl())?;
        dir.write("configs.json", serde_json::to_string_pretty(&configs)? + "\n")?;
        dir.finish()?;
    }
    Ok(())
}

enum EmbedScope {
    PerDataset,
    Single(Scope),
}

fn parse_embed_scope(s: &str) -> Result<EmbedScope> {
    if s == "per-dataset" {
        return Ok(EmbedScope::PerDataset);
    }
    s.parse::<Scope>()
        .map(EmbedScope::Single)
        .map_err(|e| usage(e.to_string()))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    require_files(&[path])?;
    embeddings::load_corpus(path).with_context(|| format!("embeddings: {}", path.display()))
}

pub fn embed(a: &EmbedArgs, out: &mut impl Write) -> Result<()> {
    let scope = parse_embed_scope(&a.scope)?;
    let corpus = load_corpus(&a.corpus)?;
    let truth = a.truth.as_deref().map(read_single_tree).transpose()?;
    let mut inputs = vec![a.corpus.clone()];
    inputs.extend(a.truth.clone());

    // (name, tree, rf) rows, consensus last when present.
    let mut rows: Vec<(String, PhyloTree, Option<usize>)> = Vec::new();
    let mut consensus = None;
    let mut matrix = None;
    match scope {
        EmbedScope::PerDataset => {
            let out = embeddings::per_dataset_trees(&corpus, a.metric, truth.as_ref()).context("embeddings")?;
            for (d, t) in &out.trees {
                let rf = out.rf.as_ref().map(|r| r[d]);
                rows.push((d.clone(), t.clone(), rf));
            }
            if let Some((d, rf)) = out.most_informative() {
                eprintln!("lowest RF to truth: dataset {d} ({rf})");
            }
            consensus = Some((out.consensus.clone(), out.consensus_rf));
        }
        EmbedScope::Single(scope) => {
            let m = embeddings::model_distance_matrix(&corpus, a.metric, &scope).context("embeddings")?;
            let t = phylo::neighbor_joining(&m).context("phylo")?;
            let rf = truth
                .as_ref()
                .map(|tr| phylo::rf_distance(&t, tr, phylo::RfMode::Unrooted))
                .transpose()
                .context("phylo")?;
            rows.push((scope.to_string(), t, rf));
            matrix = Some(m);
        }
    }

    let mut table = String::from(if truth.is_some() { "scope\tnewick\trf\n" } else { "scope\tnewick\n" });
    let mut push_row = |name: &str, t: &PhyloTree, rf: Option<usize>| {
        table.push_str(&format!("{name}\t{}", t.to_newick()));
        if let Some(rf) = rf {
            table.push_str(&format!("\t{rf}"));
        }
        table.push('\n');
    };
    for (name, t, rf) in &rows {
        push_row(name, t, *rf);
    }
    if let Some((t, rf)) = &consensus {
        push_row("(consensus)", t, *rf);
    }

    match a.format {
        Format::Csv => out.write_all(table.as_bytes())?,
        Format::Json => {
            let trees: BTreeMap<&str, String> = rows.iter().map(|(n, t, _)| (n.as_str(), t.to_newick())).collect();
            let rf: Option<BTreeMap<&str, usize>> = truth
                .as_ref()
                .map(|_| rows.iter().filter_map(|(n, _, r)| r.map(|r| (n.as_str(), r))).collect());
            let value = json!({
                "metric": a.metric.to_string(),
                "trees": trees,
                "rf": rf,
                "consensus": consensus.as_ref().map(|(t, _)| t.to_newick()),
                "consensus_rf": consensus.as_ref().and_then(|(_, r)| *r),
            });
            out.write_all(to_json_line(&value)?.as_bytes())?;
        }
    }
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "embed", a, &inputs, None)? {
        dir.write("trees.tsv", &table)?;
        if let Some((t, _)) = &consensus {
            dir.write("consensus.nwk", format!("{}\n", t.to_newick()))?;
        }
        if let Some(m) = &matrix {
            dir.write("matrix.csv", m.to_csv_string()?)?;
        }
        dir.finish()?;
    }
    Ok(())
}

pub fn pca(a: &PcaArgs, out: &mut impl Write) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let (labels, points) = corpus.prompt_points(&a.dataset, &a.prompt);
    if points.is_empty() {
        return Err(usage(format!(
            "no embeddings for dataset `{}`, prompt `{}`",
            a.dataset, a.prompt
        )));
    }
    let p = embeddings::pca2(&labels, &points).context("embeddings")?;
    let mut csv = String::from("label,pc1,pc2\n");
    {
        let mut w = csv_escape_writer(&mut csv);
        for (l, c) in p.labels.iter().zip(&p.coordinates) {
            w(l, c);
        }
    }
    let sidecar = json!({
        "dataset": a.dataset,
        "prompt": a.prompt,
        "points": p.labels.len(),
        "explained": p.explained,
        "eigenvalues": p.eigenvalues,
    });
    match a.format {
        Format::Csv => out.write_all(csv.as_bytes())?,
        Format::Json => out.write_all(to_json_line(&p)?.as_bytes())?,
    }
    if let Some(mut dir) = open_output(a.out_dir.as_deref(), "pca", a, std::slice::from_ref(&a.corpus), None)? {
        dir.write("pca.csv", &csv)?;
        dir.write("pca.json", to_json_line(&sidecar)?)?;
        dir.write("pca.svg", render::svg_scatter(&p))?;
        dir.finish()?;
    }
    Ok(())
}

fn csv_escape_writer(buf: &mut String) -> impl FnMut(&str, &[f64; 2]) + '_ {
    move |label, c| {
        let needs_quotes = label.contains([',', '"', '\n', '\r']);
        let label = if needs_quotes {
            format!("\"{}\"", label.replace('"', "\"\""))
        } else {
            label.to_string()
        };
        buf.push_str(&format!("{label},{},{}\n", format_g17(c[0]), format_g17(c[1])));
    }
}
