//! Labeled pairwise distance matrices and their CSV form.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{self, MetricError, MetricKind};
use crate::tensor_archive::ModelGenotype;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("models `{a}` and `{b}`: {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: MetricError,
    },
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("need at least {need} models, got {got}")]
    TooFewModels { need: usize, got: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// Which features a matrix was computed from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Total,
    Layer(String),
    /// Embedding scope: `global`, `dataset:<d>` or `prompt:<d>:<p>`.
    Embedding(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Total => f.write_str("total"),
            Source::Layer(name) => write!(f, "layer:{name}"),
            Source::Embedding(scope) => write!(f, "embedding:{scope}"),
        }
    }
}

impl FromStr for Source {
    type Err = MatrixError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "total" {
            Ok(Source::Total)
        } else if let Some(name) = s.strip_prefix("layer:") {
            Ok(Source::Layer(name.to_string()))
        } else if let Some(scope) = s.strip_prefix("embedding:") {
            Ok(Source::Embedding(scope.to_string()))
        } else {
            Err(MatrixError::InvalidMatrix(format!("unknown source tag `{s}`")))
        }
    }
}

/// Symmetric, zero-diagonal, nonnegative matrix over uniquely labeled items.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
    pub metric: MetricKind,
    pub source: Source,
}

impl DistanceMatrix {
    /// Validates and wraps a row-major `n × n` buffer.
    pub fn new(
        labels: Vec<String>,
        values: Vec<f64>,
        metric: MetricKind,
        source: Source,
    ) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * n {
            return Err(MatrixError::InvalidMatrix(format!(
                "{} values for {n} labels",
                values.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(MatrixError::InvalidMatrix("empty label".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(MatrixError::InvalidMatrix(format!("duplicate label `{l}`")));
            }
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(MatrixError::InvalidMatrix(format!(
                    "nonzero diagonal at `{}`",
                    labels[i]
                )));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(MatrixError::InvalidMatrix(format!(
                        "entry ({}, {}) = {v} is negative or non-finite",
                        labels[i], labels[j]
                    )));
                }
                if v != values[j * n + i] {
                    return Err(MatrixError::InvalidMatrix(format!(
                        "asymmetric entries at ({}, {})",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            values,
            metric,
            source,
        })
    }

    /// Builds a matrix from an upper-triangle closure, mirroring each value.
    pub fn from_fn<F>(labels: Vec<String>, metric: MetricKind, source: Source, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> f64,
    {
        let n = labels.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Self::new(labels, values, metric, source)
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.labels.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.labels.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Smallest off-diagonal entry, if any.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .min_by(f64::total_cmp)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .flexible(false)
            .from_writer(Vec::new());
        let mut header = vec![format!("#metric={};source={}", self.metric, self.source)];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.row(i).iter().map(|&v| format_g17(v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| MatrixError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| MatrixError::InvalidMatrix("empty file".into()))??;
        let tag = header
            .get(0)
            .ok_or_else(|| MatrixError::InvalidMatrix("missing tag cell".into()))?;
        let (metric, source) = parse_tag(tag)?;
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = labels.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for rec in records {
            let rec = rec?;
            if rec.len() != n + 1 {
                return Err(MatrixError::InvalidMatrix(format!(
                    "row {} has {} cells, expected {}",
                    rows + 1,
                    rec.len(),
                    n + 1
                )));
            }
            if rows >= n || rec.get(0) != Some(labels[rows].as_str()) {
                return Err(MatrixError::InvalidMatrix(format!(
                    "row {} label does not match header",
                    rows + 1
                )));
            }
            for cell in rec.iter().skip(1) {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    MatrixError::InvalidMatrix(format!("cannot parse `{cell}` as a number"))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows != n {
            return Err(MatrixError::InvalidMatrix(format!(
                "{rows} rows for {n} labels"
            )));
        }
        Self::new(labels, values, metric, source)
    }
}

fn parse_tag(tag: &str) -> Result<(MetricKind, Source)> {
    let body = tag
        .strip_prefix('#')
        .ok_or_else(|| MatrixError::InvalidMatrix(format!("bad tag cell `{tag}`")))?;
    // The source comes last and may itself contain `;`.
    let (metric, source) = body
        .strip_prefix("metric=")
        .and_then(|rest| rest.split_once(";source="))
        .ok_or_else(|| MatrixError::InvalidMatrix(format!("bad tag cell `{tag}`")))?;
    Ok((metric.parse::<MetricKind>()?, source.parse::<Source>()?))
}

/// Formats like C's `printf("%.17g", v)`.
pub fn format_g17(v: f64) -> String {
    const PRECISION: i32 = 17;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..PRECISION).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (PRECISION - 1 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_matrix(m: &DistanceMatrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_csv_string()?)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DistanceMatrix> {
    DistanceMatrix::from_csv_str(&std::fs::read_to_string(path)?)
}

fn pair_indices(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn check_models(models: &[ModelGenotype]) -> Result<Vec<String>> {
    if models.len() < 3 {
        return Err(MatrixError::TooFewModels {
            need: 3,
            got: models.len(),
        });
    }
    let labels: Vec<String> = models.iter().map(|m| m.model_id.clone()).collect();
    for (i, m) in models.iter().enumerate().skip(1) {
        metrics::shared_layers(&models[0], m).map_err(|source| MatrixError::Pair {
            a: labels[0].clone(),
            b: labels[i].clone(),
            source,
        })?;
    }
    Ok(labels)
}

/// Total-weight distance matrix. Each unordered pair is computed once.
pub fn build_total(metric: MetricKind, models: &[ModelGenotype]) -> Result<DistanceMatrix> {
    let labels = check_models(models)?;
    let n = models.len();
    let pairs = pair_indices(n);
    let dists: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            metrics::total_distance(metric, &models[i], &models[j]).map_err(|source| {
                MatrixError::Pair {
                    a: labels[i].clone(),
                    b: labels[j].clone(),
                    source,
                }
            })
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (&(i, j), d) in pairs.iter().zip(dists) {
        values[i * n + j] = d;
        values[j * n + i] = d;
    }
    DistanceMatrix::new(labels, values, metric, Source::Total)
}

/// One matrix per layer, in canonical (sorted) layer order.
pub fn build_per_layer(metric: MetricKind, models: &[ModelGenotype]) -> Result<Vec<DistanceMatrix>> {
    let labels = check_models(models)?;
    let n = models.len();
    let mut layer_names: Vec<&str> = models[0].layer_names().collect();
    layer_names.sort_unstable();
    let pairs = pair_indices(n);
    let per_pair: Vec<Vec<(String, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            metrics::layer_distances(metric, &models[i], &models[j]).map_err(|source| {
                MatrixError::Pair {
                    a: labels[i].clone(),
                    b: labels[j].clone(),
                    source,
                }
            })
        })
        .collect::<Result<_>>()?;
    layer_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut values = vec![0.0; n * n];
            for (&(i, j), row) in pairs.iter().zip(&per_pair) {
                let d = row[k].1;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
            DistanceMatrix::new(labels.clone(), values, metric, Source::Layer(name.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(id: &str, layers: &[(&str, Vec<f64>)]) -> ModelGenotype {
        layers
            .iter()
            .fold(ModelGenotype::new(id), |g, (n, v)| g.with_layer(*n, v.clone()))
    }

    fn random_models(count: usize, seed: u64) -> Vec<ModelGenotype> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let q: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
                model(&format!("m{i}"), &[("q", q), ("k", k)])
            })
            .collect()
    }

    #[test]
    fn g17_matches_printf() {
        // reference strings produced by C printf("%.17g")
        let cases = [
            (1.5, "1.5"),
            (0.1, "0.10000000000000001"),
            (1.0 / 3.0, "0.33333333333333331"),
            (123456.0, "123456"),
            (1e-5, "1.0000000000000001e-05"),
            (1e20, "1e+20"),
            (2.5e-300, "2.5e-300"),
            (1e16, "10000000000000000"),
            (1e17, "1e+17"),
            (0.0001, "0.0001"),
            (7.0, "7"),
        ];
        for (v, s) in cases {
            assert_eq!(format_g17(v), s, "{v:e}");
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn identical_models_give_zero_matrix() {
        let m = random_models(1, 3).pop().unwrap();
        let models: Vec<_> = (0..3)
            .map(|i| ModelGenotype {
                model_id: format!("c{i}"),
                ..m.clone()
            })
            .collect();
        let d = build_total(MetricKind::L1, &models).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collinear_models_under_l1() {
        let delta = 0.25;
        let base = vec![1.0, -2.0, 3.0];
        let shift = |k: f64| {
            let mut v = base.clone();
            v[0] += k * delta;
            v
        };
        let models = vec![
            model("a", &[("w", shift(0.0))]),
            model("b", &[("w", shift(1.0))]),
            model("c", &[("w", shift(2.0))]),
        ];
        let d = build_total(MetricKind::L1, &models).unwrap();
        let expected = [0.0, delta, 2.0 * delta, delta, 0.0, delta, 2.0 * delta, delta, 0.0];
        assert_eq!(d.values(), &expected);
    }

    #[test]
    fn total_matches_double_loop() {
        let models = random_models(4, 11);
        for m in MetricKind::all() {
            let d = build_total(m, &models).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let expected = if i == j {
                        0.0
                    } else {
                        metrics::total_distance(m, &models[i], &models[j]).unwrap()
                    };
                    assert_eq!(d.get(i, j), expected);
                }
            }
        }
    }

    #[test]
    fn per_layer_counts_and_locality() {
        let names: Vec<String> = (0..131).map(|i| format!("layer.{i:03}")).collect();
        let models: Vec<ModelGenotype> = (0..3)
            .map(|k| {
                names.iter().fold(ModelGenotype::new(format!("m{k}")), |g, n| {
                    let v = if n == "layer.042" { vec![k as f64, 1.0] } else { vec![1.0, 2.0] };
                    g.with_layer(n.clone(), v)
                })
            })
            .collect();
        let mats = build_per_layer(MetricKind::L1, &models).unwrap();
        assert_eq!(mats.len(), 131);
        for m in &mats {
            let nonzero = m.values().iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, m.source == Source::Layer("layer.042".into()));
        }
    }

    #[test]
    fn per_layer_l1_sums_to_total() {
        let models = random_models(5, 2);
        let total = build_total(MetricKind::L1, &models).unwrap();
        let layers = build_per_layer(MetricKind::L1, &models).unwrap();
        for (k, t) in total.values().iter().enumerate() {
            let s: f64 = layers.iter().map(|m| m.values()[k]).sum();
            assert!((s - t).abs() <= 1e-12 * t.max(1.0));
        }
    }

    #[test]
    fn permutation_equivariant() {
        let models = random_models(5, 9);
        let d = build_total(MetricKind::Cosine, &models).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<_> = perm.iter().map(|&i| models[i].clone()).collect();
        let p = build_total(MetricKind::Cosine, &permuted).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                assert_eq!(p.get(a, b), d.get(perm[a], perm[b]));
            }
        }
    }

    #[test]
    fn too_few_models_and_pair_errors() {
        let models = random_models(2, 0);
        assert!(matches!(
            build_total(MetricKind::L1, &models),
            Err(MatrixError::TooFewModels { .. })
        ));
        let mut models = random_models(3, 0);
        models[2].layers.insert("extra".into(), vec![1.0]);
        let err = build_total(MetricKind::L1, &models).unwrap_err();
        assert!(err.to_string().contains("m2"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<String> = ["a", "b,c", "d", "e f", "g"].iter().map(|s| s.to_string()).collect();
        let m = DistanceMatrix::from_fn(labels, MetricKind::Threshold(0.5), Source::Layer("enc.q".into()), |_, _| {
            rng.gen::<f64>() * 1e3
        });
        let m = m.unwrap();
        let text = m.to_csv_string().unwrap();
        assert!(text.starts_with("#metric=threshold:0.5;source=layer:enc.q,a,"));
        let back = DistanceMatrix::from_csv_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_csv_string().unwrap(), text);
    }

    #[test]
    fn source_may_contain_separators() {
        let source = Source::Layer("a;source=b,c".into());
        let m = DistanceMatrix::from_fn(vec!["x".into(), "y".into()], MetricKind::L2, source.clone(), |_, _| 1.0).unwrap();
        let back = DistanceMatrix::from_csv_str(&m.to_csv_string().unwrap()).unwrap();
        assert_eq!(back.source, source);
    }

    #[test]
    fn rejects_bad_csv() {
        let asym = "#metric=l1;source=total,a,b\na,0,1\nb,2,0\n";
        assert!(matches!(
            DistanceMatrix::from_csv_str(asym),
            Err(MatrixError::InvalidMatrix(_))
        ));
        let neg = "#metric=l1;source=total,a,b\na,0,-1\nb,-1,0\n";
        assert!(matches!(
            DistanceMatrix::from_csv_str(neg),
            Err(MatrixError::InvalidMatrix(_))
        ));
        let diag = "#metric=l1;source=total,a,b\na,1,1\nb,1,0\n";
        assert!(DistanceMatrix::from_csv_str(diag).is_err());
        let tag = "metric=l1,a,b\na,0,1\nb,1,0\n";
        assert!(DistanceMatrix::from_csv_str(tag).is_err());
    }
}
