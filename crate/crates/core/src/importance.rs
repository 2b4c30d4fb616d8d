//! Layer importance: which layers move most across a collection of models.

use rayon::prelude::*;
use serde::Serialize;

use crate::distmat::MatrixError;
use crate::metrics::{self, MetricKind};
use crate::tensor_archive::ModelGenotype;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: String,
    /// Mean distance over all unordered model pairs.
    pub mean: f64,
    /// Population standard deviation over the same pairs.
    pub std: f64,
    pub rank: usize,
    /// Embedding or shared (tied) layer, flagged for the reader.
    pub shared: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerImportanceReport {
    #[serde(serialize_with = "serialize_metric")]
    pub metric: MetricKind,
    pub pairs: usize,
    /// Sorted by mean descending; ties broken by layer name.
    pub rows: Vec<LayerRow>,
}

fn serialize_metric<S: serde::Serializer>(m: &MetricKind, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(m)
}

impl LayerImportanceReport {
    pub fn top(&self, k: usize) -> &[LayerRow] {
        &self.rows[..k.min(self.rows.len())]
    }

    pub fn bottom(&self, k: usize) -> &[LayerRow] {
        &self.rows[self.rows.len().saturating_sub(k)..]
    }

    /// Smallest and largest mean layer distance, to expose scale differences
    /// between layers before a metric is chosen.
    pub fn magnitude_range(&self) -> Option<(f64, f64)> {
        let min = self.rows.iter().map(|r| r.mean).min_by(f64::total_cmp)?;
        let max = self.rows.iter().map(|r| r.mean).max_by(f64::total_cmp)?;
        Some((min, max))
    }

    /// CSV with a `#metric=` comment line, then `layer,mean,std,rank`.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut out = format!("#metric={}\n", self.metric);
        w.write_record(["layer", "mean", "std", "rank"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.layer.clone(),
                crate::distmat::format_g17(r.mean),
                crate::distmat::format_g17(r.std),
                r.rank.to_string(),
            ])
            .expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        out.push_str(std::str::from_utf8(&bytes).expect("utf-8"));
        out
    }
}

pub fn is_shared_layer(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.contains("shared") || lower.contains("embed")
}

pub fn rank_layers(metric: MetricKind, models: &[ModelGenotype]) -> Result<LayerImportanceReport, MatrixError> {
    if models.len() < 2 {
        return Err(MatrixError::TooFewModels {
            need: 2,
            got: models.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (i + 1..models.len()).map(move |j| (i, j)))
        .collect();
    let per_pair: Vec<Vec<(String, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            metrics::layer_distances(metric, &models[i], &models[j]).map_err(|source| MatrixError::Pair {
                a: models[i].model_id.clone(),
                b: models[j].model_id.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let count = pairs.len() as f64;
    let mut rows: Vec<LayerRow> = per_pair[0]
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let mut sum = metrics::KahanSum::default();
            per_pair.iter().for_each(|p| sum.add(p[k].1));
            let mean = sum.value() / count;
            let mut sq = metrics::KahanSum::default();
            per_pair.iter().for_each(|p| sq.add((p[k].1 - mean).powi(2)));
            LayerRow {
                layer: name.clone(),
                mean,
                std: (sq.value() / count).sqrt(),
                rank: 0,
                shared: is_shared_layer(name),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.layer.cmp(&b.layer)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(LayerImportanceReport {
        metric,
        pairs: pairs.len(),
        rows,
    })
}
