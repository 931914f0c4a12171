//! Stochastic gradients of `L = E_q[ℓ(z)]` with respect to the mixture
//! prior's means, covariances and mixing parameters.
//!
//! The implicit estimators only need `ℓ(z)` and `∇_z ℓ(z)` at points drawn
//! from `q`; no path from the noise to the sample is differentiated. Each
//! sample contributes to every component, weighted by its responsibility.
//! The explicit baseline in [`explicit_reparam_grads`] routes each sample to
//! the single component that produced it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{LatentBatch, MixturePrior};
use crate::numerics::{axpy, cholesky, gemm, norm, Mat, Rng, SpdMat};

pub mod oracle;
pub mod verify;

pub use oracle::{variance_comparison, QuadraticLoss, VarianceComparison};

/// Everything the estimators consume for one latent sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PerSampleGrad {
    pub z: Vec<f64>,
    /// Loss used for the mean and covariance estimators.
    pub loss: f64,
    /// Adversarial part of the loss, the only one the mixing parameters see.
    pub adv_loss: f64,
    /// `∇_z` of `loss`.
    pub dz: Vec<f64>,
    /// `δ(z)_c = q(z|c) / q(z)`
    pub delta: Vec<f64>,
    pub pi: Vec<f64>,
    /// Cached `Σ_c⁻¹ (z − μ_c)`; recomputed from the prior when absent.
    pub precision_residual: Option<Vec<Vec<f64>>>,
}

impl PerSampleGrad {
    /// Builds sample `i` of a latent batch, reusing its cached residuals.
    pub fn from_batch(batch: &LatentBatch, i: usize, pi: &[f64], loss: f64, adv_loss: f64, dz: Vec<f64>) -> Self {
        PerSampleGrad {
            z: batch.z[i].clone(),
            loss,
            adv_loss,
            dz,
            delta: batch.delta[i].clone(),
            pi: pi.to_vec(),
            precision_residual: Some(batch.precision_residual[i].clone()),
        }
    }

    #[inline]
    fn weight(&self, c: usize) -> f64 {
        self.delta[c] * self.pi[c]
    }
}

/// Gradient estimates for every prior parameter.
///
/// `d_sigma` holds the descent direction `ΔΣ_c` (the negated gradient),
/// before the positive-definiteness correction; `d_mu` and `d_rho` are
/// plain gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorGradients {
    pub d_mu: Vec<Vec<f64>>,
    pub d_sigma: Vec<Mat>,
    pub d_rho: Vec<f64>,
}

/// Per-component gradient magnitudes, for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
}

impl PriorGradients {
    pub fn zeros(k: usize, dim: usize) -> Self {
        PriorGradients { d_mu: vec![vec![0.0; dim]; k], d_sigma: vec![Mat::zeros(dim, dim); k], d_rho: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.d_mu.len()
    }

    pub fn norms(&self) -> GradNorms {
        GradNorms {
            mu: self.d_mu.iter().map(|v| norm(v)).collect(),
            sigma: self.d_sigma.iter().map(Mat::frobenius_norm).collect(),
            rho: self.d_rho.iter().map(|v| v.abs()).collect(),
        }
    }

    /// Rescales every parameter group whose norm exceeds `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        for v in &mut self.d_mu {
            let n = norm(v);
            if n > max_norm {
                v.iter_mut().for_each(|x| *x *= max_norm / n);
            }
        }
        for m in &mut self.d_sigma {
            let n = m.frobenius_norm();
            if n > max_norm {
                m.scale_in_place(max_norm / n);
            }
        }
        let n = norm(&self.d_rho);
        if n > max_norm {
            self.d_rho.iter_mut().for_each(|x| *x *= max_norm / n);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.d_mu.iter().flatten().all(|v| v.is_finite())
            && self.d_sigma.iter().all(Mat::all_finite)
            && self.d_rho.iter().all(|v| v.is_finite())
    }
}

fn check_batch(batch: &[PerSampleGrad], c: Option<usize>) -> Result<(usize, usize)> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let (k, d) = (first.pi.len(), first.dz.len());
    if let Some(c) = c {
        if c >= k {
            return Err(Error::BadComponent { component: c, k });
        }
    }
    for s in batch {
        if s.dz.len() != d || s.z.len() != d || s.delta.len() != k || s.pi.len() != k {
            return Err(Error::ShapeMismatch("per-sample gradients disagree on K or dimension".into()));
        }
    }
    Ok((k, d))
}

/// `∇_{μ_c} L ≈ (1/B) Σ_i δ(z_i)_c π_c ∇_z ℓ(z_i)`.
pub fn grad_mu(batch: &[PerSampleGrad], c: usize) -> Result<Vec<f64>> {
    let (_, d) = check_batch(batch, Some(c))?;
    Ok(mu_estimate(batch, c, d))
}

fn mu_estimate(batch: &[PerSampleGrad], c: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for s in batch {
        axpy(s.weight(c), &s.dz, &mut out);
    }
    let inv_b = 1.0 / batch.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv_b);
    out
}

/// `ΔΣ_c = −(1/4B) Σ_i (S_i + S_iᵀ)` with
/// `S_i = δ(z_i)_c π_c Σ_c⁻¹ (z_i − μ_c) ∇_z ℓ(z_i)ᵀ`.
///
/// The result is bitwise symmetric.
pub fn grad_sigma(batch: &[PerSampleGrad], c: usize, prior: &MixturePrior) -> Result<Mat> {
    let (k, d) = check_batch(batch, Some(c))?;
    if k != prior.k() || d != prior.dim() {
        return Err(Error::ShapeMismatch("batch and prior disagree on K or dimension".into()));
    }
    Ok(sigma_estimate(batch, c, prior))
}

fn sigma_estimate(batch: &[PerSampleGrad], c: usize, prior: &MixturePrior) -> Mat {
    let d = prior.dim();
    let b = batch.len();
    // M = Σ_i w_i r_i ∇ℓ_iᵀ as one product of B×d matrices.
    let mut wr = Mat::zeros(b, d);
    let mut dz = Mat::zeros(b, d);
    for (i, s) in batch.iter().enumerate() {
        let w = s.weight(c);
        dz.row_mut(i).copy_from_slice(&s.dz);
        if w == 0.0 {
            continue;
        }
        let owned;
        let r = match &s.precision_residual {
            Some(r) => &r[c],
            None => {
                let diff: Vec<f64> = s.z.iter().zip(&prior.mu()[c]).map(|(a, b)| a - b).collect();
                owned = prior.sigma()[c].solve(&diff);
                &owned
            }
        };
        for (o, v) in wr.row_mut(i).iter_mut().zip(r) {
            *o = w * v;
        }
    }
    let mut m = Mat::zeros(d, d);
    gemm(1.0, &wr, true, &dz, false, 0.0, &mut m);
    let scale = -1.0 / (4.0 * batch.len() as f64);
    let mut out = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = scale * (m.get(i, j) + m.get(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// `∇_{ρ_c} L ≈ (1/B) Σ_i π_c (δ(z_i)_c − 1) ℓ^a(z_i)`, using the adversarial
/// loss only.
pub fn grad_rho(batch: &[PerSampleGrad]) -> Result<Vec<f64>> {
    let (k, _) = check_batch(batch, None)?;
    Ok(rho_estimate(batch, k))
}

fn rho_estimate(batch: &[PerSampleGrad], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for s in batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += s.pi[c] * (s.delta[c] - 1.0) * s.adv_loss;
        }
    }
    let inv_b = 1.0 / batch.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv_b);
    out
}

/// All three implicit estimators over one batch.
pub fn implicit_grads(batch: &[PerSampleGrad], prior: &MixturePrior) -> Result<PriorGradients> {
    let (k, d) = check_batch(batch, None)?;
    if k != prior.k() || d != prior.dim() {
        return Err(Error::ShapeMismatch("batch and prior disagree on K or dimension".into()));
    }
    Ok(PriorGradients {
        d_mu: (0..k).map(|c| mu_estimate(batch, c, d)).collect(),
        d_sigma: (0..k).map(|c| sigma_estimate(batch, c, prior)).collect(),
        d_rho: rho_estimate(batch, k),
    })
}

/// `Σ' = Σ + γΔΣ + (γ²/2) ΔΣ Σ⁻¹ ΔΣ`, refactorized.
///
/// With `X = L⁻¹ΔΣ` the correction is `XᵀX`, so it is formed as an exact
/// Gram matrix. The result is positive definite whenever `Σ` is, for any
/// symmetric `ΔΣ` and any `γ`.
pub fn pd_update(sigma: &SpdMat, delta: &Mat, gamma: f64) -> Result<SpdMat> {
    let d = sigma.dim();
    if delta.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "covariance step {}x{} for dimension {d}",
            delta.rows(),
            delta.cols()
        )));
    }
    if !delta.is_symmetric(1e-10 * delta.data().iter().fold(1.0_f64, |a, v| a.max(v.abs()))) {
        let max_asym = (0..d)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (delta.get(i, j) - delta.get(j, i)).abs())
            .fold(0.0, f64::max);
        return Err(Error::NotSymmetric { max_asym });
    }
    let mut x = Mat::zeros(d, d);
    gemm(1.0, &sigma.chol_inverse(), false, delta, false, 0.0, &mut x);
    let mut corr = Mat::zeros(d, d);
    gemm(1.0, &x, true, &x, false, 0.0, &mut corr);
    let half_g2 = 0.5 * gamma * gamma;
    let mut out = sigma.full().clone();
    for i in 0..d {
        for j in 0..=i {
            let v = out.get(i, j) + gamma * delta.get(i, j) + half_g2 * corr.get(i, j);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    cholesky(&out)
}

/// Applies [`pd_update`] to component `c` of the prior in place.
pub fn apply_sigma_update(prior: &mut MixturePrior, c: usize, delta: &Mat, gamma: f64) -> Result<()> {
    if c >= prior.k() {
        return Err(Error::BadComponent { component: c, k: prior.k() });
    }
    let next = pd_update(&prior.sigma()[c], delta, gamma)?;
    prior.set_sigma(c, next)
}

/// One ancestrally drawn sample of the explicit baseline.
#[derive(Clone, Debug)]
pub struct ExplicitSample {
    pub component: usize,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub loss: f64,
    pub dz: Vec<f64>,
}

/// Draws `c ~ Cat(π)`, `z = μ_c + L_c ε` and evaluates the loss.
pub fn explicit_samples(
    prior: &MixturePrior,
    b: usize,
    loss_fn: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    rng: &mut Rng,
) -> Vec<ExplicitSample> {
    let pi = prior.pi();
    (0..b)
        .map(|_| {
            let component = rng.categorical(&pi);
            let eps = rng.sample_normal(prior.dim());
            let mut z = prior.sigma()[component].chol_mul(&eps);
            axpy(1.0, &prior.mu()[component], &mut z);
            let (loss, dz) = loss_fn(&z);
            ExplicitSample { component, eps, z, loss, dz }
        })
        .collect()
}

/// Explicit-reparameterization baseline: each sample updates only the
/// component it was drawn from. Means get `∇_z ℓ`, covariances the chain rule
/// through the Cholesky factor, and mixing parameters the score-function
/// estimator. Same output conventions as [`implicit_grads`].
pub fn explicit_reparam_grads(
    prior: &MixturePrior,
    b: usize,
    loss_fn: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    rng: &mut Rng,
) -> Result<PriorGradients> {
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let samples = explicit_samples(prior, b, loss_fn, rng);
    explicit_grads_from(prior, &samples)
}

pub fn explicit_grads_from(prior: &MixturePrior, samples: &[ExplicitSample]) -> Result<PriorGradients> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (k, d) = (prior.k(), prior.dim());
    let pi = prior.pi();
    let mut out = PriorGradients::zeros(k, d);
    // per-component Σ_i lower(∇ℓ εᵀ)
    let mut g_l = vec![Mat::zeros(d, d); k];
    for s in samples {
        let c = s.component;
        axpy(1.0, &s.dz, &mut out.d_mu[c]);
        for i in 0..d {
            let row = g_l[c].row_mut(i);
            for j in 0..=i {
                row[j] += s.dz[i] * s.eps[j];
            }
        }
        for (r, o) in out.d_rho.iter_mut().enumerate() {
            let ind = if r == c { 1.0 } else { 0.0 };
            *o += (ind - pi[r]) * s.loss;
        }
    }
    let inv_b = 1.0 / samples.len() as f64;
    for c in 0..k {
        out.d_mu[c].iter_mut().for_each(|v| *v *= inv_b);
        g_l[c].scale_in_place(inv_b);
        let grad = chol_grad_to_cov_grad(&prior.sigma()[c], &g_l[c]);
        out.d_sigma[c] = grad.scale(-1.0);
    }
    out.d_rho.iter_mut().for_each(|v| *v *= inv_b);
    Ok(out)
}

/// Pulls a gradient with respect to the Cholesky factor `L` back to the
/// symmetric covariance: `sym(L⁻ᵀ Φ(Lᵀ G) L⁻¹)`, where `Φ` keeps the strict
/// lower triangle and halves the diagonal.
pub fn chol_grad_to_cov_grad(sigma: &SpdMat, g_l: &Mat) -> Mat {
    let d = sigma.dim();
    let l = sigma.chol();
    let mut p = Mat::zeros(d, d);
    crate::numerics::gemm(1.0, l, true, g_l, false, 0.0, &mut p);
    for i in 0..d {
        for j in i + 1..d {
            p.set(i, j, 0.0);
        }
        p.set(i, i, 0.5 * p.get(i, i));
    }
    // Y = P L⁻¹, row by row: each row y solves Lᵀ yᵀ = pᵀ
    let mut y = Mat::zeros(d, d);
    for i in 0..d {
        let sol = sigma.solve_upper(p.row(i));
        y.row_mut(i).copy_from_slice(&sol);
    }
    // G = L⁻ᵀ Y, column by column
    let mut g = Mat::zeros(d, d);
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| y.get(i, j)).collect();
        let sol = sigma.solve_upper(&col);
        for i in 0..d {
            g.set(i, j, sol[i]);
        }
    }
    g.symmetrize()
}
