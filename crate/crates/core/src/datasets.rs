//! The imbalanced eight-Gaussian benchmark and numeric CSV ingestion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat, Rng};

/// Imbalanced counts: the first four modes 5k each, the last four 15k.
pub const IMBALANCED_COUNTS: [usize; 8] = [5000, 5000, 5000, 5000, 15000, 15000, 15000, 15000];
/// Per-coordinate standard deviation of every mode (variance 0.01).
pub const MODE_STD: f64 = 0.1;

/// Centers of the eight modes on the radius-2 circle, clockwise from (0, 2).
pub fn mode_centers() -> [[f64; 2]; 8] {
    let r = std::f64::consts::SQRT_2;
    [
        [0.0, 2.0],
        [r, r],
        [2.0, 0.0],
        [r, -r],
        [0.0, -2.0],
        [-r, -r],
        [-2.0, 0.0],
        [-r, r],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum ScaleMode {
    None,
    /// Per-column min-max to `[−1, 1]`.
    MinmaxPm1,
    /// Per-column min-max to `[0, 1]`.
    #[serde(rename = "minmax_01")]
    Minmax01,
    /// `log₂(x + 1)` then divided by the column maximum of that value.
    Log2p1_01,
}

/// The transform that was applied, with the per-column constants needed to
/// invert it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Scaling {
    None,
    MinmaxPm1 { min: Vec<f64>, max: Vec<f64> },
    #[serde(rename = "minmax_01")]
    Minmax01 { min: Vec<f64>, max: Vec<f64> },
    Log2p1_01 { max_log: Vec<f64> },
}

impl Scaling {
    /// Fits the transform to the columns of `x`.
    pub fn fit(mode: ScaleMode, x: &Mat) -> Result<Self> {
        let cols = x.cols();
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(match mode {
            ScaleMode::None => Scaling::None,
            ScaleMode::MinmaxPm1 => Scaling::MinmaxPm1 { min, max },
            ScaleMode::Minmax01 => Scaling::Minmax01 { min, max },
            ScaleMode::Log2p1_01 => {
                if let Some(j) = min.iter().position(|&m| m < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "log2p1_01 scaling needs nonnegative values; column {j} has minimum {}",
                        min[j]
                    )));
                }
                Scaling::Log2p1_01 { max_log: max.iter().map(|m| (m + 1.0).log2()).collect() }
            }
        })
    }

    pub fn mode(&self) -> ScaleMode {
        match self {
            Scaling::None => ScaleMode::None,
            Scaling::MinmaxPm1 { .. } => ScaleMode::MinmaxPm1,
            Scaling::Minmax01 { .. } => ScaleMode::Minmax01,
            Scaling::Log2p1_01 { .. } => ScaleMode::Log2p1_01,
        }
    }

    /// Constant columns map to the center of the target range.
    pub fn apply(&self, x: &mut Mat) {
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = match self {
                    Scaling::None => *v,
                    Scaling::MinmaxPm1 { min, max } => {
                        let w = max[j] - min[j];
                        if w > 0.0 { 2.0 * (*v - min[j]) / w - 1.0 } else { 0.0 }
                    }
                    Scaling::Minmax01 { min, max } => {
                        let w = max[j] - min[j];
                        if w > 0.0 { (*v - min[j]) / w } else { 0.5 }
                    }
                    Scaling::Log2p1_01 { max_log } => {
                        if max_log[j] > 0.0 { (*v + 1.0).log2() / max_log[j] } else { 0.0 }
                    }
                };
            }
        }
    }

    pub fn invert(&self, x: &mut Mat) {
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = match self {
                    Scaling::None => *v,
                    Scaling::MinmaxPm1 { min, max } => min[j] + (*v + 1.0) / 2.0 * (max[j] - min[j]),
                    Scaling::Minmax01 { min, max } => min[j] + *v * (max[j] - min[j]),
                    Scaling::Log2p1_01 { max_log } => (*v * max_log[j]).exp2() - 1.0,
                };
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub x: Mat,
    pub labels: Option<Vec<usize>>,
    pub scaling: Scaling,
}

impl LabeledDataset {
    pub fn new(x: Mat, labels: Option<Vec<usize>>, scaling: Scaling) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != x.rows() {
                return Err(Error::LengthMismatch { left: x.rows(), right: l.len() });
            }
        }
        Ok(LabeledDataset { x, labels, scaling })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// `1 + max label`, or 0 without labels.
    pub fn n_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    /// Rows grouped by label.
    pub fn by_class(&self) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        if let Some(labels) = &self.labels {
            for (i, &l) in labels.iter().enumerate() {
                out[l].push(self.x.row(i).to_vec());
            }
        }
        out
    }

    /// Fraction of rows per label.
    pub fn class_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_classes()];
        if let Some(labels) = &self.labels {
            labels.iter().for_each(|&l| w[l] += 1.0);
            let n = labels.len() as f64;
            w.iter_mut().for_each(|v| *v /= n);
        }
        w
    }
}

/// Eight 2-D Gaussians on the radius-2 circle with `counts[i]` points in mode
/// `i`, jointly min-max scaled to `[−1, 1]` per dimension. Labels are mode
/// indices.
pub fn make_synthetic_8gauss(seed: u64, counts: &[usize; 8]) -> Result<LabeledDataset> {
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidConfig("every mode needs at least one point".into()));
    }
    let mut rng = Rng::new(seed);
    let n: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (mode, (&count, center)) in counts.iter().zip(mode_centers().iter()).enumerate() {
        for _ in 0..count {
            data.push(center[0] + MODE_STD * rng.normal());
            data.push(center[1] + MODE_STD * rng.normal());
            labels.push(mode);
        }
    }
    let mut x = Mat::from_vec(n, 2, data)?;
    let scaling = Scaling::fit(ScaleMode::MinmaxPm1, &x)?;
    scaling.apply(&mut x);
    LabeledDataset::new(x, Some(labels), scaling)
}

/// The scaled images of the mode centers under a dataset's scaling.
pub fn scaled_mode_centers(ds: &LabeledDataset) -> Vec<Vec<f64>> {
    let mut c = Mat::from_rows(&mode_centers()).expect("fixed shape");
    ds.scaling.apply(&mut c);
    c.row_vecs()
}

fn parse_field(s: &str, row: usize, col: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse { row, col, msg: format!("{e} ({s:?})") })
}

/// Reads a rectangular numeric CSV. A first row with any non-numeric field
/// is treated as a header. With `has_labels` the last column holds
/// nonnegative integer class labels. Rows and columns in errors are 1-based
/// file positions.
pub fn load_csv(path: &Path, has_labels: bool, scale: ScaleMode) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        if idx == 0 && rec.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::RaggedRows { row: line, expected: w, found: rec.len() });
        }
        let nx = if has_labels { w.saturating_sub(1) } else { w };
        if nx == 0 {
            return Err(Error::Parse { row: line, col: 1, msg: "no feature columns".into() });
        }
        for (j, f) in rec.iter().take(nx).enumerate() {
            data.push(parse_field(f, line, j + 1)?);
        }
        if has_labels {
            let f = rec.get(w - 1).unwrap_or("");
            let l = f.trim().parse::<usize>().map_err(|e| Error::Parse {
                row: line,
                col: w,
                msg: format!("label must be a nonnegative integer: {e} ({f:?})"),
            })?;
            labels.push(l);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let cols = data.len() / n;
    let mut x = Mat::from_vec(n, cols, data)?;
    let scaling = Scaling::fit(scale, &x)?;
    scaling.apply(&mut x);
    LabeledDataset::new(x, has_labels.then_some(labels), scaling)
}

/// Writes `x0..x{d−1}` columns plus a final `label` column when labels exist.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `b` rows drawn uniformly with replacement.
pub fn sample_batch(ds: &LabeledDataset, b: usize, rng: &mut Rng) -> Result<Mat> {
    Ok(sample_batch_with_labels(ds, b, rng)?.0)
}

/// Like [`sample_batch`], also returning the row indices drawn.
pub fn sample_batch_with_labels(ds: &LabeledDataset, b: usize, rng: &mut Rng) -> Result<(Mat, Vec<usize>)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = ds.dim();
    let mut out = Mat::zeros(b, d);
    let mut idx = Vec::with_capacity(b);
    for i in 0..b {
        let r = rng.below(ds.len());
        out.row_mut(i).copy_from_slice(ds.x.row(r));
        idx.push(r);
    }
    Ok((out, idx))
}

/// Declarative dataset source, as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum DatasetSpec {
    #[serde(rename = "synthetic_8gauss")]
    Synthetic8gauss {
        #[serde(default = "default_counts")]
        counts: [usize; 8],
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "yes")]
        has_labels: bool,
        #[serde(default = "default_scale")]
        scale: ScaleMode,
    },
}

fn default_counts() -> [usize; 8] {
    IMBALANCED_COUNTS
}

fn yes() -> bool {
    true
}

fn default_scale() -> ScaleMode {
    ScaleMode::MinmaxPm1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic8gauss { counts: IMBALANCED_COUNTS, seed: 0 }
    }
}

impl DatasetSpec {
    /// Relative CSV paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<LabeledDataset> {
        match self {
            DatasetSpec::Synthetic8gauss { counts, seed } => make_synthetic_8gauss(*seed, counts),
            DatasetSpec::Csv { path, has_labels, scale } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                load_csv(&p, *has_labels, *scale)
            }
        }
    }
}
