//! Quadratic test loss with closed-form expectations under the mixture, and
//! the Monte Carlo drivers that compare estimators against it.
//!
//! For `ℓ(z) = zᵀAz + bᵀz` with symmetric `A`,
//! `E_c[ℓ] = f_c = tr(AΣ_c) + μ_cᵀAμ_c + bᵀμ_c` and `L = Σ_c π_c f_c`, so
//! `∇_{μ_c}L = π_c(2Aμ_c + b)`, `∇_{Σ_c}L = π_c A` and
//! `∇_{ρ_c}L = π_c(f_c − L)`.

use serde::{Deserialize, Serialize};

use super::{explicit_samples, implicit_grads, PerSampleGrad, PriorGradients};
use crate::error::Result;
use crate::mixture::MixturePrior;
use crate::numerics::{cholesky, dot, norm, Mat, Rng, SpdMat};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLoss {
    a: Mat,
    b: Vec<f64>,
}

impl QuadraticLoss {
    pub fn new(a: Mat, b: Vec<f64>) -> Self {
        let a = a.symmetrize();
        QuadraticLoss { a, b }
    }

    /// `A` with standard normal entries (symmetrized), `b` standard normal.
    pub fn random(dim: usize, rng: &mut Rng) -> Self {
        let a = random_symmetric(dim, rng);
        let b = rng.sample_normal(dim);
        QuadraticLoss { a, b }
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        dot(z, &self.a.matvec(z)) + dot(&self.b, z)
    }

    /// `(ℓ(z), 2Az + b)`.
    pub fn value_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let az = self.a.matvec(z);
        let v = dot(z, &az) + dot(&self.b, z);
        let g = az.iter().zip(&self.b).map(|(a, b)| 2.0 * a + b).collect();
        (v, g)
    }

    /// `f_c = E_{q(z|c)}[ℓ]`.
    pub fn component_expectation(&self, prior: &MixturePrior, c: usize) -> f64 {
        let mu = &prior.mu()[c];
        let tr: f64 = self.a.data().iter().zip(prior.sigma()[c].full().data()).map(|(a, s)| a * s).sum();
        tr + dot(mu, &self.a.matvec(mu)) + dot(&self.b, mu)
    }

    pub fn expectation(&self, prior: &MixturePrior) -> f64 {
        prior.pi().iter().enumerate().map(|(c, p)| p * self.component_expectation(prior, c)).sum()
    }

    pub fn closed_grad_mu(&self, prior: &MixturePrior, c: usize) -> Vec<f64> {
        let pi = prior.pi()[c];
        let am = self.a.matvec(&prior.mu()[c]);
        am.iter().zip(&self.b).map(|(a, b)| pi * (2.0 * a + b)).collect()
    }

    /// `∇_{Σ_c}L = π_c A`; the estimators report its negation.
    pub fn closed_grad_sigma(&self, prior: &MixturePrior, c: usize) -> Mat {
        self.a.scale(prior.pi()[c])
    }

    pub fn closed_grad_rho(&self, prior: &MixturePrior) -> Vec<f64> {
        let l = self.expectation(prior);
        prior.pi().iter().enumerate().map(|(c, p)| p * (self.component_expectation(prior, c) - l)).collect()
    }
}

/// Symmetric matrix with standard normal entries on and below the diagonal.
pub fn random_symmetric(dim: usize, rng: &mut Rng) -> Mat {
    let mut m = Mat::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = rng.normal();
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// `G Gᵀ / dim + floor·I` with standard normal `G`.
pub fn random_spd(dim: usize, floor: f64, rng: &mut Rng) -> SpdMat {
    let g = Mat::from_vec(dim, dim, rng.sample_normal(dim * dim)).expect("square buffer");
    let mut s = g.matmul(&g.transpose()).expect("square").scale(1.0 / dim as f64);
    for i in 0..dim {
        s.set(i, i, s.get(i, i) + floor);
    }
    cholesky(&s).expect("Gram matrix plus a positive floor is PD")
}

/// Implicit-estimator samples for the quadratic loss, drawn from the prior.
pub fn quadratic_samples(prior: &MixturePrior, loss: &QuadraticLoss, n: usize, rng: &mut Rng) -> Result<Vec<PerSampleGrad>> {
    let batch = prior.sample(n, 1.0, rng)?;
    let pi = prior.pi();
    Ok((0..n)
        .map(|i| {
            let (l, g) = loss.value_grad(&batch.z[i]);
            PerSampleGrad::from_batch(&batch, i, &pi, l, l, g)
        })
        .collect())
}

/// Mean of chunked estimates plus the entrywise standard error of that mean,
/// taken from the spread of the chunk estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub mean: PriorGradients,
    pub se: PriorGradients,
}

impl McEstimate {
    /// Euclidean norm of the entrywise SEs of `μ_c`.
    pub fn se_mu(&self, c: usize) -> f64 {
        norm(&self.se.d_mu[c])
    }

    pub fn se_sigma(&self, c: usize) -> f64 {
        self.se.d_sigma[c].frobenius_norm()
    }

    pub fn se_rho(&self, c: usize) -> f64 {
        self.se.d_rho[c]
    }

    /// Largest `|estimate − target| / SE` over every entry (lower triangle
    /// for covariances), with the covariance target given as a gradient.
    /// Entries whose SE is zero must match exactly.
    pub fn max_z(&self, target: &PriorGradients) -> f64 {
        let z = |e: f64, t: f64, se: f64| {
            if se > 0.0 {
                (e - t).abs() / se
            } else if e == t {
                0.0
            } else {
                f64::INFINITY
            }
        };
        let mut worst = 0.0_f64;
        for c in 0..self.mean.k() {
            for j in 0..self.mean.d_mu[c].len() {
                worst = worst.max(z(self.mean.d_mu[c][j], target.d_mu[c][j], self.se.d_mu[c][j]));
                for i in j..self.mean.d_mu[c].len() {
                    worst = worst.max(z(
                        self.mean.d_sigma[c].get(i, j),
                        target.d_sigma[c].get(i, j),
                        self.se.d_sigma[c].get(i, j),
                    ));
                }
            }
            worst = worst.max(z(self.mean.d_rho[c], target.d_rho[c], self.se.d_rho[c]));
        }
        worst
    }

    /// Number of scalar comparisons [`McEstimate::max_z`] makes.
    pub fn n_entries(&self) -> usize {
        let d = self.mean.d_mu.first().map_or(0, Vec::len);
        self.mean.k() * (d + d * (d + 1) / 2 + 1)
    }
}

/// Averages `n / chunk` independent chunk estimates of the implicit
/// gradients. A mapping applied to every chunk (for fault injection) is
/// accepted as `tamper`.
pub fn monte_carlo(
    prior: &MixturePrior,
    loss: &QuadraticLoss,
    n: usize,
    chunk: usize,
    rng: &mut Rng,
    tamper: &dyn Fn(&mut PriorGradients),
) -> Result<McEstimate> {
    let chunks = (n / chunk).max(1);
    let (k, d) = (prior.k(), prior.dim());
    let mut estimates = Vec::with_capacity(chunks);
    for _ in 0..chunks {
        let batch = quadratic_samples(prior, loss, chunk, rng)?;
        let mut g = implicit_grads(&batch, prior)?;
        tamper(&mut g);
        estimates.push(g);
    }
    let m = chunks as f64;
    let mut mean = PriorGradients::zeros(k, d);
    for g in &estimates {
        for c in 0..k {
            mean.d_mu[c].iter_mut().zip(&g.d_mu[c]).for_each(|(a, b)| *a += b / m);
            mean.d_sigma[c].add_scaled(1.0 / m, &g.d_sigma[c])?;
            mean.d_rho[c] += g.d_rho[c] / m;
        }
    }
    // SE of the mean = sqrt(Σ (x − x̄)² / (m (m − 1)))
    let denom = (m * (m - 1.0)).max(1.0);
    let mut se = PriorGradients::zeros(k, d);
    for g in &estimates {
        for c in 0..k {
            for (s, (a, b)) in se.d_mu[c].iter_mut().zip(g.d_mu[c].iter().zip(&mean.d_mu[c])) {
                *s += (a - b).powi(2);
            }
            let diff = g.d_sigma[c].sub(&mean.d_sigma[c])?;
            for (s, v) in se.d_sigma[c].data_mut().iter_mut().zip(diff.data()) {
                *s += v * v;
            }
            se.d_rho[c] += (g.d_rho[c] - mean.d_rho[c]).powi(2);
        }
    }
    for c in 0..k {
        se.d_mu[c].iter_mut().for_each(|v| *v = (*v / denom).sqrt());
        se.d_sigma[c].data_mut().iter_mut().for_each(|v| *v = (*v / denom).sqrt());
        se.d_rho[c] = (se.d_rho[c] / denom).sqrt();
    }
    Ok(McEstimate { n: chunks * chunk, mean, se })
}

/// Closed-form targets in the estimators' conventions (covariance entries
/// are the negated gradient).
pub fn closed_targets(prior: &MixturePrior, loss: &QuadraticLoss) -> PriorGradients {
    PriorGradients {
        d_mu: (0..prior.k()).map(|c| loss.closed_grad_mu(prior, c)).collect(),
        d_sigma: (0..prior.k()).map(|c| loss.closed_grad_sigma(prior, c).scale(-1.0)).collect(),
        d_rho: loss.closed_grad_rho(prior),
    }
}

/// Total empirical variance (summed over components and coordinates) of the
/// per-sample mean-gradient contributions, implicit vs explicit, computed on
/// the same ancestral samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub implicit: f64,
    pub explicit: f64,
}

pub fn variance_comparison(prior: &MixturePrior, loss: &QuadraticLoss, n: usize, rng: &mut Rng) -> Result<VarianceComparison> {
    let f = |z: &[f64]| loss.value_grad(z);
    let samples = explicit_samples(prior, n, &f, rng);
    let (k, d) = (prior.k(), prior.dim());
    let mut imp = Welford::new(k * d);
    let mut exp = Welford::new(k * d);
    let mut ci = vec![0.0; k * d];
    let mut ce = vec![0.0; k * d];
    for s in &samples {
        let (_, resp) = prior.responsibilities(&s.z)?;
        for c in 0..k {
            let hit = if c == s.component { 1.0 } else { 0.0 };
            for j in 0..d {
                ci[c * d + j] = resp[c] * s.dz[j];
                ce[c * d + j] = hit * s.dz[j];
            }
        }
        imp.push(&ci);
        exp.push(&ce);
    }
    Ok(VarianceComparison { implicit: imp.total_variance(), explicit: exp.total_variance() })
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    fn total_variance(&self) -> f64 {
        self.m2.iter().sum::<f64>() / (self.n - 1.0).max(1.0)
    }
}
