//! Vector distances over flattened weight layers and embeddings.
//!
//! All accumulation is compensated (Kahan–Babuška) so that totals over tens of
//! millions of weights keep full double precision.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_archive::ModelGenotype;

/// Default epsilon for [`MetricKind::Threshold`].
pub const DEFAULT_THRESHOLD_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty vectors")]
    Empty,
    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),
    #[error("layer sets differ (missing in second: {missing:?}; extra in second: {extra:?})")]
    LayerMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("layer `{layer}` length differs: {left} vs {right}")]
    ShapeMismatch {
        layer: String,
        left: usize,
        right: usize,
    },
    #[error("invalid metric `{0}` (expected l1, l2, cosine, correlation or threshold:<epsilon>)")]
    InvalidMetric(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricKind {
    L1,
    L2,
    Cosine,
    Correlation,
    /// L1 distance gated to zero when it does not exceed epsilon.
    Threshold(f64),
}

impl MetricKind {
    /// The five measures, with the default threshold epsilon.
    pub fn all() -> [MetricKind; 5] {
        [
            MetricKind::L1,
            MetricKind::L2,
            MetricKind::Cosine,
            MetricKind::Correlation,
            MetricKind::Threshold(DEFAULT_THRESHOLD_EPSILON),
        ]
    }

    pub fn threshold(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(MetricKind::Threshold(epsilon))
        } else {
            Err(MetricError::InvalidMetric(format!("threshold:{epsilon}")))
        }
    }

    /// Short name without parameters, used to group reports.
    pub fn family(&self) -> &'static str {
        match self {
            MetricKind::L1 => "l1",
            MetricKind::L2 => "l2",
            MetricKind::Cosine => "cosine",
            MetricKind::Correlation => "correlation",
            MetricKind::Threshold(_) => "threshold",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Threshold(eps) => write!(f, "threshold:{eps:?}"),
            other => f.write_str(other.family()),
        }
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "l1" => Ok(MetricKind::L1),
            "l2" => Ok(MetricKind::L2),
            "cosine" => Ok(MetricKind::Cosine),
            "correlation" => Ok(MetricKind::Correlation),
            "threshold" => Ok(MetricKind::Threshold(DEFAULT_THRESHOLD_EPSILON)),
            _ => {
                let eps = lower
                    .strip_prefix("threshold:")
                    .and_then(|e| e.parse::<f64>().ok())
                    .ok_or_else(|| MetricError::InvalidMetric(s.to_string()))?;
                MetricKind::threshold(eps).map_err(|_| MetricError::InvalidMetric(s.to_string()))
            }
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Streaming accumulator over paired chunks of two vectors.
///
/// Cosine and correlation need the raw and centered second moments, so the
/// correlation path makes a second pass with the means known.
#[derive(Clone, Debug, Default)]
struct PairMoments {
    n: usize,
    abs_diff: KahanSum,
    sq_diff: KahanSum,
    dot: KahanSum,
    xx: KahanSum,
    yy: KahanSum,
    identical: bool,
    x_constant: Option<f64>,
    y_constant: Option<f64>,
    x_varies: bool,
    y_varies: bool,
}

impl PairMoments {
    fn new() -> Self {
        Self {
            identical: true,
            ..Default::default()
        }
    }

    fn push(&mut self, x: &[f64], y: &[f64], center: (f64, f64)) {
        for (&a, &b) in x.iter().zip(y) {
            let d = a - b;
            self.abs_diff.add(d.abs());
            self.sq_diff.add(d * d);
            let (ca, cb) = (a - center.0, b - center.1);
            self.dot.add(ca * cb);
            self.xx.add(ca * ca);
            self.yy.add(cb * cb);
            if d != 0.0 {
                self.identical = false;
            }
            match self.x_constant {
                None => self.x_constant = Some(a),
                Some(c) if c != a => self.x_varies = true,
                _ => {}
            }
            match self.y_constant {
                None => self.y_constant = Some(b),
                Some(c) if c != b => self.y_varies = true,
                _ => {}
            }
        }
        self.n += x.len();
    }
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// Distance over the virtual concatenation of paired chunks.
fn chunked_distance<'a, I>(metric: MetricKind, chunks: I) -> Result<f64>
where
    I: Iterator<Item = (&'a [f64], &'a [f64])> + Clone,
{
    let center = if metric == MetricKind::Correlation {
        let (mut sx, mut sy, mut n) = (KahanSum::default(), KahanSum::default(), 0usize);
        for (x, y) in chunks.clone() {
            x.iter().for_each(|&v| sx.add(v));
            y.iter().for_each(|&v| sy.add(v));
            n += x.len();
        }
        if n == 0 {
            return Err(MetricError::Empty);
        }
        (sx.value() / n as f64, sy.value() / n as f64)
    } else {
        (0.0, 0.0)
    };

    let mut m = PairMoments::new();
    for (x, y) in chunks {
        m.push(x, y, center);
    }
    if m.n == 0 {
        return Err(MetricError::Empty);
    }

    let d = match metric {
        MetricKind::L1 => m.abs_diff.value(),
        MetricKind::L2 => m.sq_diff.value().max(0.0).sqrt(),
        MetricKind::Threshold(eps) => {
            let l1 = m.abs_diff.value();
            if l1 > eps {
                l1
            } else {
                0.0
            }
        }
        MetricKind::Cosine => {
            let (xx, yy) = (m.xx.value(), m.yy.value());
            if xx <= 0.0 || yy <= 0.0 {
                return Err(MetricError::DegenerateVector("zero vector under cosine"));
            }
            if m.identical {
                0.0
            } else {
                (1.0 - m.dot.value() / (xx.sqrt() * yy.sqrt())).clamp(0.0, 2.0)
            }
        }
        MetricKind::Correlation => {
            if !m.x_varies || !m.y_varies {
                return Err(MetricError::DegenerateVector(
                    "constant vector under correlation",
                ));
            }
            let (xx, yy) = (m.xx.value(), m.yy.value());
            if m.identical {
                0.0
            } else {
                (1.0 - m.dot.value() / (xx.sqrt() * yy.sqrt())).clamp(0.0, 2.0)
            }
        }
    };
    Ok(d)
}

pub fn distance(metric: MetricKind, x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    chunked_distance(metric, std::iter::once((x, y)))
}

/// Layer names in the canonical (sorted) order, after checking both genotypes
/// carry the same layers with the same lengths.
pub fn shared_layers<'a>(a: &'a ModelGenotype, b: &ModelGenotype) -> Result<Vec<&'a str>> {
    let mut missing: Vec<String> = a
        .layers
        .keys()
        .filter(|k| !b.layers.contains_key(*k))
        .cloned()
        .collect();
    let mut extra: Vec<String> = b
        .layers
        .keys()
        .filter(|k| !a.layers.contains_key(*k))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        missing.sort();
        extra.sort();
        return Err(MetricError::LayerMismatch { missing, extra });
    }
    let mut names: Vec<&str> = a.layers.keys().map(String::as_str).collect();
    names.sort_unstable();
    for name in &names {
        let (x, y) = (&a.layers[*name], &b.layers[*name]);
        if x.len() != y.len() {
            return Err(MetricError::ShapeMismatch {
                layer: name.to_string(),
                left: x.len(),
                right: y.len(),
            });
        }
    }
    Ok(names)
}

/// One distance per layer, in canonical layer order.
pub fn layer_distances(
    metric: MetricKind,
    a: &ModelGenotype,
    b: &ModelGenotype,
) -> Result<Vec<(String, f64)>> {
    shared_layers(a, b)?
        .into_iter()
        .map(|name| {
            let d = distance(metric, &a.layers[name], &b.layers[name])?;
            Ok((name.to_string(), d))
        })
        .collect()
}

/// Distance over the concatenation of all layers in canonical order.
pub fn total_distance(metric: MetricKind, a: &ModelGenotype, b: &ModelGenotype) -> Result<f64> {
    let names = shared_layers(a, b)?;
    let chunks = names
        .iter()
        .map(|n| (a.layers[*n].as_slice(), b.layers[*n].as_slice()));
    chunked_distance(metric, chunks)
}
