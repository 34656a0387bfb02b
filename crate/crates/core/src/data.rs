//! Datasets, synthetic distribution-shift generators, standardization and
//! evaluation metrics.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Matrix, Vector};
use crate::seed;

/// Regression data. `domain_tag` is ground truth for evaluation only; none of
/// the training entry points accept a `Dataset`, they take `x` and `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub domain_tag: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vector, domain_tag: Option<Vec<i64>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::mismatch("dataset", x.shape(), y.shape()));
        }
        if let Some(tags) = &domain_tag {
            if tags.len() != y.len() {
                return Err(Error::mismatch("domain tags", (tags.len(), 1), (y.len(), 1)));
            }
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset { x, y, domain_tag })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows whose domain tag equals `tag`.
    pub fn select_domain(&self, tag: i64) -> Option<Dataset> {
        let tags = self.domain_tag.as_ref()?;
        let rows: Vec<usize> = (0..self.len()).filter(|i| tags[*i] == tag).collect();
        Some(self.select_rows(&rows))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = Matrix::from_fn(rows.len(), self.dim(), |i, j| self.x[(rows[i], j)]);
        let y = Vector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        let domain_tag = self.domain_tag.as_ref().map(|t| rows.iter().map(|r| t[*r]).collect());
        Dataset { x, y, domain_tag }
    }

    pub fn distinct_domains(&self) -> Vec<i64> {
        let mut tags: Vec<i64> = self.domain_tag.clone().unwrap_or_default();
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// CSV with columns `x0..x{d-1}, y, domain`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        header.push("domain".into());
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = (0..self.dim()).map(|j| fmt_f64(self.x[(i, j)])).collect();
            rec.push(fmt_f64(self.y[i]));
            rec.push(self.domain_tag.as_ref().map(|t| t[i].to_string()).unwrap_or_default());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Label-noise convention for the synthetic generators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// `N(0, v)` means variance `v`.
    #[default]
    Variance,
    /// `N(0, v)` means standard deviation `v`.
    Std,
}

impl NoiseConvention {
    fn std(self, v: f64) -> f64 {
        match self {
            NoiseConvention::Variance => v.sqrt(),
            NoiseConvention::Std => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    pub noise: NoiseConvention,
    /// Multiplies every noise draw; 0 gives noiseless labels.
    pub noise_scale: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            noise: NoiseConvention::Variance,
            noise_scale: 1.0,
        }
    }
}

pub const TRAIN_MAJORITY: usize = 100;
pub const TRAIN_MINORITY: usize = 15;
pub const TEST_SIZE: usize = 80;

/// Cluster-1 label of the 1-d problem without noise.
pub fn synthetic_1d_cluster1(x: f64) -> f64 {
    3.0 * (x / (2.0 * PI)).sin()
}

/// Cluster-2 label of the 1-d problem without noise.
pub fn synthetic_1d_cluster2(x: f64) -> f64 {
    -((x - 6.5) / (32.0 * PI)).sin() + 0.5
}

pub fn synthetic_2d_cluster1(x1: f64, x2: f64) -> f64 {
    1.5 * (30.0 * x1 + 20.0).sin() + 1.5 * (30.0 * x2 + 20.0).sin()
}

pub fn synthetic_2d_cluster2(x1: f64, x2: f64) -> f64 {
    0.5 * (50.0 * x1 + 20.0).sin() + 0.5 * (50.0 * x2 + 20.0).sin() + 1.1
}

fn stack(parts: Vec<(Vec<Vec<f64>>, Vec<f64>, i64)>) -> Dataset {
    let n: usize = parts.iter().map(|p| p.1.len()).sum();
    let d = parts.iter().find_map(|p| p.0.first().map(Vec::len)).unwrap_or(1);
    let mut x = Matrix::zeros(n, d);
    let mut y = Vector::zeros(n);
    let mut tags = Vec::with_capacity(n);
    let mut i = 0;
    for (xs, ys, tag) in parts {
        for (row, label) in xs.iter().zip(ys) {
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            y[i] = label;
            tags.push(tag);
            i += 1;
        }
    }
    Dataset {
        x,
        y,
        domain_tag: Some(tags),
    }
}

/// Two 1-d Gaussian clusters: 100 + 15 training points, 80 test points from
/// the minority cluster. Domain tags are 1 and 2.
pub fn gen_synthetic_1d(seed: u64) -> (Dataset, Dataset) {
    gen_synthetic_1d_with(seed, SyntheticOptions::default())
}

pub fn gen_synthetic_1d_with(seed: u64, opts: SyntheticOptions) -> (Dataset, Dataset) {
    let mut rng = seed::rng_for(seed, "data/synthetic_1d");
    let c1 = Normal::new(0.0, 1.0).unwrap();
    let c2 = Normal::new(6.5, 1.0).unwrap();
    let eps = Normal::new(0.0, opts.noise.std(0.1)).unwrap();
    let cluster1 = |count: usize, rng: &mut seed::Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let x = c1.sample(rng);
            let e = eps.sample(rng) * opts.noise_scale;
            xs.push(vec![x]);
            ys.push(synthetic_1d_cluster1(x) + 3.0 * e);
        }
        (xs, ys, 1)
    };
    let cluster2 = |count: usize, rng: &mut seed::Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let x = c2.sample(rng);
            let e = eps.sample(rng) * opts.noise_scale;
            xs.push(vec![x]);
            ys.push(synthetic_1d_cluster2(x) + e);
        }
        (xs, ys, 2)
    };
    let train = stack(vec![cluster1(TRAIN_MAJORITY, &mut rng), cluster2(TRAIN_MINORITY, &mut rng)]);
    let test = stack(vec![cluster2(TEST_SIZE, &mut rng)]);
    (train, test)
}

/// Two 2-d Gaussian clusters around (0.3, 0.3) and (0.7, 0.7) with
/// covariance 0.01 I. Each label sums the two coordinates of a 2-d noise
/// vector (covariance 0.1 I for cluster 1, 0.05 I for cluster 2).
pub fn gen_synthetic_2d(seed: u64) -> (Dataset, Dataset) {
    gen_synthetic_2d_with(seed, SyntheticOptions::default())
}

pub fn gen_synthetic_2d_with(seed: u64, opts: SyntheticOptions) -> (Dataset, Dataset) {
    let mut rng = seed::rng_for(seed, "data/synthetic_2d");
    let spread = Normal::new(0.0, 0.1).unwrap();
    let eps1 = Normal::new(0.0, opts.noise.std(0.1)).unwrap();
    let eps2 = Normal::new(0.0, opts.noise.std(0.05)).unwrap();
    let draw = |count: usize, center: f64, tag: i64, rng: &mut seed::Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let x1 = center + spread.sample(rng);
            let x2 = center + spread.sample(rng);
            let (clean, eps) = if tag == 1 {
                (synthetic_2d_cluster1(x1, x2), eps1)
            } else {
                (synthetic_2d_cluster2(x1, x2), eps2)
            };
            let e = (eps.sample(rng) + eps.sample(rng)) * opts.noise_scale;
            xs.push(vec![x1, x2]);
            ys.push(clean + e);
        }
        (xs, ys, tag)
    };
    let train = stack(vec![draw(TRAIN_MAJORITY, 0.3, 1, &mut rng), draw(TRAIN_MINORITY, 0.7, 2, &mut rng)]);
    let test = stack(vec![draw(TEST_SIZE, 0.7, 2, &mut rng)]);
    (train, test)
}

/// Column selection for [`load_csv`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub target: String,
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Bin edges for a numeric domain column: value `v` gets the tag of the
    /// last edge `<= v` (values below the first edge get -1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_bins: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub dropped_rows: usize,
    /// Raw domain labels in tag order when the domain column is not numeric.
    pub domain_labels: Vec<String>,
}

pub fn load_csv(path: &Path, columns: &CsvColumns) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path)?;
    read_csv(file, columns, &path.display().to_string())
}

/// Reads a headered CSV. Rows with an unparseable selected cell are dropped
/// and counted.
pub fn read_csv<R: Read>(reader: R, columns: &CsvColumns, source: &str) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            name: name.to_string(),
            available: headers.clone(),
        })
    };
    let target = find(&columns.target)?;
    let features: Vec<usize> = columns.features.iter().map(|f| find(f)).collect::<Result<_>>()?;
    let domain = columns.domain.as_deref().map(find).transpose()?;
    if features.is_empty() {
        return Err(Error::InvalidInput("at least one feature column is required".into()));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    let mut raw_domains: Vec<String> = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let parse = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        let row: Option<Vec<f64>> = features.iter().map(|i| parse(*i)).collect();
        let (Some(row), Some(t)) = (row, parse(target)) else {
            dropped += 1;
            continue;
        };
        let dom = match domain {
            Some(i) => match record.get(i) {
                Some(s) if !s.is_empty() => Some(s.to_string()),
                _ => {
                    dropped += 1;
                    continue;
                }
            },
            None => None,
        };
        xs.extend(row);
        ys.push(t);
        if let Some(d) = dom {
            raw_domains.push(d);
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyDataset(source.to_string()));
    }
    let (domain_tag, domain_labels) = match domain {
        Some(_) => {
            let (tags, labels) = encode_domains(&raw_domains, columns.domain_bins.as_deref());
            (Some(tags), labels)
        }
        None => (None, Vec::new()),
    };
    let x = Matrix::from_row_slice(ys.len(), features.len(), &xs);
    Ok(LoadedCsv {
        dataset: Dataset::new(x, Vector::from_vec(ys), domain_tag)?,
        dropped_rows: dropped,
        domain_labels,
    })
}

fn encode_domains(raw: &[String], bins: Option<&[f64]>) -> (Vec<i64>, Vec<String>) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    match (numeric, bins) {
        (Some(values), Some(edges)) => {
            let tags = values
                .iter()
                .map(|v| edges.iter().rposition(|e| e <= v).map_or(-1, |p| p as i64))
                .collect();
            (tags, Vec::new())
        }
        (Some(values), None) if values.iter().all(|v| v.fract() == 0.0) => {
            (values.iter().map(|v| *v as i64).collect(), Vec::new())
        }
        _ => {
            let mut ids: BTreeMap<&str, i64> = BTreeMap::new();
            for s in raw {
                let next = ids.len() as i64;
                ids.entry(s.as_str()).or_insert(next);
            }
            let mut labels: Vec<(i64, String)> = ids.iter().map(|(s, i)| (*i, s.to_string())).collect();
            labels.sort();
            (
                raw.iter().map(|s| ids[s.as_str()]).collect(),
                labels.into_iter().map(|(_, s)| s).collect(),
            )
        }
    }
}

/// Affine scaling fitted on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Indices of constant input columns (given unit std).
    pub constant_columns: Vec<usize>,
    pub constant_target: bool,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, bool) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 0.0 && std.is_finite() {
        (mean, std, false)
    } else {
        (mean, 1.0, true)
    }
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("cannot standardize an empty training set".into()));
        }
        let mut x_mean = Vec::new();
        let mut x_std = Vec::new();
        let mut constant_columns = Vec::new();
        for j in 0..train.dim() {
            let (m, s, constant) = mean_std(train.x.column(j).iter().copied());
            x_mean.push(m);
            x_std.push(s);
            if constant {
                constant_columns.push(j);
            }
        }
        let (y_mean, y_std, constant_target) = mean_std(train.y.iter().copied());
        Ok(Standardizer {
            x_mean,
            x_std,
            y_mean,
            y_std,
            constant_columns,
            constant_target,
        })
    }

    pub fn transform_x(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_std[j])
    }

    pub fn transform_y(&self, y: &Vector) -> Vector {
        y.map(|v| (v - self.y_mean) / self.y_std)
    }

    pub fn inverse_y(&self, y: &Vector) -> Vector {
        y.map(|v| v * self.y_std + self.y_mean)
    }

    pub fn inverse_x(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * self.x_std[j] + self.x_mean[j])
    }

    /// Scales a standard deviation in standardized target units back to
    /// original units.
    pub fn inverse_std(&self, s: &Vector) -> Vector {
        s * self.y_std
    }

    pub fn transform(&self, d: &Dataset) -> Dataset {
        Dataset {
            x: self.transform_x(&d.x),
            y: self.transform_y(&d.y),
            domain_tag: d.domain_tag.clone(),
        }
    }
}

/// Fits a [`Standardizer`] on `train` and applies it to both sets.
pub fn standardize_fit_transform(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train)?;
    if test.dim() != train.dim() {
        return Err(Error::mismatch("standardize", train.x.shape(), test.x.shape()));
    }
    Ok((s.transform(train), s.transform(test), s))
}

pub fn rmse(pred: &Vector, truth: &Vector) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::mismatch("rmse", (pred.len(), 1), (truth.len(), 1)));
    }
    let sse: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Fraction of points with `|truth - mean| <= std`.
pub fn coverage_rate(pred_mean: &Vector, pred_std: &Vector, truth: &Vector) -> Result<f64> {
    if pred_mean.len() != truth.len() || pred_std.len() != truth.len() || truth.is_empty() {
        return Err(Error::mismatch("coverage_rate", (pred_mean.len(), pred_std.len()), (truth.len(), 1)));
    }
    if pred_std.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidInput("predictive std must be >= 0".into()));
    }
    let covered = (0..truth.len())
        .filter(|&i| (truth[i] - pred_mean[i]).abs() <= pred_std[i])
        .count();
    Ok(covered as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_rate: Option<f64>,
    pub n_test: usize,
    /// RMSE per ground-truth test domain, keyed by tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_domain_rmse: BTreeMap<i64, f64>,
}

impl EvalReport {
    pub fn evaluate(pred_mean: &Vector, pred_std: Option<&Vector>, test: &Dataset) -> Result<Self> {
        let rmse_all = rmse(pred_mean, &test.y)?;
        let coverage = pred_std.map(|s| coverage_rate(pred_mean, s, &test.y)).transpose()?;
        let mut per_domain = BTreeMap::new();
        if let Some(tags) = &test.domain_tag {
            for tag in test.distinct_domains() {
                let rows: Vec<usize> = (0..tags.len()).filter(|i| tags[*i] == tag).collect();
                let p = Vector::from_iterator(rows.len(), rows.iter().map(|r| pred_mean[*r]));
                let t = Vector::from_iterator(rows.len(), rows.iter().map(|r| test.y[*r]));
                per_domain.insert(tag, rmse(&p, &t)?);
            }
        }
        Ok(EvalReport {
            rmse: rmse_all,
            coverage_rate: coverage,
            n_test: test.len(),
            per_domain_rmse: per_domain,
        })
    }
}
