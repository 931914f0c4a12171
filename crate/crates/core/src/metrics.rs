//! Clustering and generation metrics: cluster assignment, ARI, NMI,
//! Fréchet distance and the intra-cluster Fréchet distance (ICFID).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::MIN_NORM;
use crate::numerics::{argmax, dot, norm, softmax, sym_eigen, eigen_map, Mat, Rng};
use crate::trainer::TrainState;

/// Diagonal floor added to every estimated covariance.
pub const COV_FLOOR: f64 = 1e-10;
/// Rows per encoder call in [`evaluate`].
const ENCODE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidConfig(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Partition { labels, k })
    }

    /// Partition with `k` set to one past the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Partition { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Softmax over cosine similarities between an encoding and every `μ_c`.
pub fn assign_cluster(encoded: &[f64], mu: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let ne = norm(encoded);
    if ne < MIN_NORM {
        return Err(Error::DegenerateVector("assign_cluster encoding"));
    }
    let mut cos = Vec::with_capacity(mu.len());
    for m in mu {
        if m.len() != encoded.len() {
            return Err(Error::DimMismatch(format!("encoding has {} dims, mean has {}", encoded.len(), m.len())));
        }
        let nm = norm(m);
        if nm < MIN_NORM {
            return Err(Error::DegenerateVector("assign_cluster mean"));
        }
        cos.push(dot(encoded, m) / (ne * nm));
    }
    let probs = softmax(&cos);
    let hard = argmax(&probs);
    Ok((probs, hard))
}

struct Contingency {
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    n: usize,
}

fn contingency(a: &Partition, b: &Partition) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let mut table = vec![vec![0usize; b.k]; a.k];
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        table[x][y] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..b.k).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency { table, rows, cols, n: a.len() })
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(a: &Partition, b: &Partition) -> Result<f64> {
    let t = contingency(a, b)?;
    let index: f64 = t.table.iter().flatten().map(|&n| pairs(n)).sum();
    let sa: f64 = t.rows.iter().map(|&n| pairs(n)).sum();
    let sb: f64 = t.cols.iter().map(|&n| pairs(n)).sum();
    let total = pairs(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // Both partitions are all-singletons or a single group.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum NmiNorm {
    #[default]
    Geometric,
    Arithmetic,
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the geometric mean normalizer.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64> {
    nmi_with(a, b, NmiNorm::Geometric)
}

pub fn nmi_with(a: &Partition, b: &Partition, norm: NmiNorm) -> Result<f64> {
    let t = contingency(a, b)?;
    if t.n == 0 {
        return Ok(1.0);
    }
    let ha = entropy(&t.rows, t.n);
    let hb = entropy(&t.cols, t.n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == hb { 1.0 } else { 0.0 });
    }
    let n = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (t.rows[i] as f64 * t.cols[j] as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNorm::Geometric => (ha * hb).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (ha + hb),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Fraction of positions where `pred` equals `target`.
pub fn accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: target.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Sample mean and unbiased covariance with [`COV_FLOOR`] on the diagonal.
/// `group` only labels the error.
pub fn mean_cov(samples: &[Vec<f64>], group: usize) -> Result<(Vec<f64>, Mat)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::GroupTooSmall { group, size: n });
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        if s.len() != d {
            return Err(Error::DimMismatch(format!("sample has {} dims, expected {d}", s.len())));
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Mat::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (s[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / (n as f64 - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
        cov.set(i, i, cov.get(i, i) + COV_FLOOR);
    }
    Ok((mean, cov))
}

/// Eigenvalues below `-tol` mean the input was not PSD; smaller negatives are rounding.
fn psd_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    let (values, vectors) = sym_eigen(m)?;
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some((index, &pivot)) = values.iter().enumerate().find(|(_, &v)| v < -1e-8 * scale) {
        return Err(Error::NotPositiveDefinite { index, pivot });
    }
    Ok((values, vectors))
}

/// Fréchet distance between `N(m1, c1)` and `N(m2, c2)`.
pub fn frechet_distance(m1: &[f64], c1: &Mat, m2: &[f64], c2: &Mat) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.shape() != (d, d) || c2.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "frechet: means {} and {}, covariances {:?} and {:?}",
            d,
            m2.len(),
            c1.shape(),
            c2.shape()
        )));
    }
    let mean_term: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    let (v1, e1) = psd_eigen(c1)?;
    let s1 = eigen_map(&v1, &e1, |l| l.max(0.0).sqrt());
    let inner = s1.matmul(c2)?.matmul(&s1)?.symmetrize();
    let (vi, _) = psd_eigen(&inner)?;
    let cross: f64 = vi.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((mean_term + c1.trace() + c2.trace() - 2.0 * cross).max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Matching {
    /// Classes in ascending order each take their closest unused cluster.
    #[default]
    Greedy,
    /// Minimum total distance (Hungarian algorithm).
    Optimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMatch {
    pub cluster: usize,
    pub fid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcfidReport {
    pub icfid: f64,
    pub per_class: Vec<ClassMatch>,
    /// `assignment[y]` is the cluster matched to class `y`.
    pub assignment: Vec<usize>,
    /// `distances[y][c]` between class `y` and cluster `c`.
    pub distances: Vec<Vec<f64>>,
}

fn moments(groups: &[Vec<Vec<f64>>], features: &(dyn Fn(&[f64]) -> Vec<f64> + Sync)) -> Result<Vec<(Vec<f64>, Mat)>> {
    groups
        .par_iter()
        .enumerate()
        .map(|(g, samples)| {
            let f: Vec<Vec<f64>> = samples.iter().map(|s| features(s)).collect();
            mean_cov(&f, g)
        })
        .collect()
}

/// ICFID with identity features and greedy matching.
pub fn icfid(real_by_class: &[Vec<Vec<f64>>], gen_by_cluster: &[Vec<Vec<f64>>]) -> Result<IcfidReport> {
    icfid_with(real_by_class, gen_by_cluster, &|x: &[f64]| x.to_vec(), Matching::Greedy)
}

pub fn icfid_with(
    real_by_class: &[Vec<Vec<f64>>],
    gen_by_cluster: &[Vec<Vec<f64>>],
    features: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    matching: Matching,
) -> Result<IcfidReport> {
    if real_by_class.len() != gen_by_cluster.len() {
        return Err(Error::LengthMismatch { left: real_by_class.len(), right: gen_by_cluster.len() });
    }
    if real_by_class.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let real = moments(real_by_class, features)?;
    let gen = moments(gen_by_cluster, features)?;
    let distances: Vec<Vec<f64>> = real
        .par_iter()
        .map(|(mr, cr)| gen.iter().map(|(mg, cg)| frechet_distance(mr, cr, mg, cg)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(match_classes(distances, matching))
}

/// Builds the report from a class-by-cluster distance matrix.
pub fn match_classes(distances: Vec<Vec<f64>>, matching: Matching) -> IcfidReport {
    let assignment = match matching {
        Matching::Greedy => greedy(&distances),
        Matching::Optimal => hungarian(&distances),
    };
    let per_class: Vec<ClassMatch> = assignment
        .iter()
        .enumerate()
        .map(|(y, &c)| ClassMatch { cluster: c, fid: distances[y][c] })
        .collect();
    let icfid = per_class.iter().map(|m| m.fid).sum::<f64>() / per_class.len() as f64;
    IcfidReport { icfid, per_class, assignment, distances }
}

fn greedy(d: &[Vec<f64>]) -> Vec<usize> {
    let mut used = vec![false; d.len()];
    d.iter()
        .map(|row| {
            let mut best = usize::MAX;
            for (c, &v) in row.iter().enumerate() {
                if !used[c] && (best == usize::MAX || v < row[best]) {
                    best = c;
                }
            }
            used[best] = true;
            best
        })
        .collect()
}

/// Square assignment problem, O(n³) potentials method.
fn hungarian(d: &[Vec<f64>]) -> Vec<usize> {
    let n = d.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // way/p are 1-based; p[j] is the row matched to column j.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = d[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub fid: f64,
    pub icfid: Option<f64>,
    /// Class to matched component; empty without labels or when K differs from the class count.
    pub assignment: BTreeMap<usize, usize>,
    pub pi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct EvalOptions {
    pub n_gen_per_cluster: usize,
    pub seed: u64,
    pub nmi: NmiNorm,
    pub matching: Matching,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { n_gen_per_cluster: 1000, seed: 0, nmi: NmiNorm::Geometric, matching: Matching::Greedy }
    }
}

/// Hard cluster of every row of `x` under the trained encoder.
pub fn assign_rows(state: &TrainState, x: &Mat) -> Result<Vec<usize>> {
    let mu = state.prior.mu();
    let mut out = Vec::with_capacity(x.rows());
    for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
        let end = (start + ENCODE_CHUNK).min(x.rows());
        let chunk = Mat::from_rows(&(start..end).map(|i| x.row(i)).collect::<Vec<_>>())?;
        let enc = state.encode(&chunk)?;
        for i in 0..enc.rows() {
            out.push(assign_cluster(enc.row(i), mu)?.1);
        }
    }
    Ok(out)
}

/// Full report for a trained state. Uses its own RNG so `state` is untouched.
pub fn evaluate(state: &TrainState, ds: &LabeledDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let n = opts.n_gen_per_cluster;
    if n < 2 {
        return Err(Error::GroupTooSmall { group: 0, size: n });
    }
    let prior = &state.prior;
    let k = prior.k();
    let mut rng = Rng::new(opts.seed);

    let mut by_cluster = Vec::with_capacity(k);
    for c in 0..k {
        let z = prior.sample_component(c, n, &mut rng)?;
        by_cluster.push(state.generate(&Mat::from_rows(&z)?)?.row_vecs());
    }
    let pi = prior.pi();
    let z: Vec<Vec<f64>> = (0..n * k).map(|_| prior.sample_from(rng.categorical(&pi), &mut rng)).collect();
    let all_gen = state.generate(&Mat::from_rows(&z)?)?.row_vecs();
    let (mr, cr) = mean_cov(&ds.x.row_vecs(), 0)?;
    let (mg, cg) = mean_cov(&all_gen, 1)?;
    let fid = frechet_distance(&mr, &cr, &mg, &cg)?;

    let mut report = EvalReport { ari: None, nmi: None, fid, icfid: None, assignment: BTreeMap::new(), pi };
    if let Some(labels) = &ds.labels {
        let truth = Partition::from_labels(labels.clone());
        let pred = Partition::new(assign_rows(state, &ds.x)?, k)?;
        report.ari = Some(ari(&truth, &pred)?);
        report.nmi = Some(nmi_with(&truth, &pred, opts.nmi)?);
        let real = ds.by_class();
        if real.len() == k {
            let ic = icfid_with(&real, &by_cluster, &|x: &[f64]| x.to_vec(), opts.matching)?;
            report.icfid = Some(ic.icfid);
            report.assignment = ic.assignment.iter().copied().enumerate().collect();
        }
    }
    Ok(report)
}
