//! The learnable Gaussian-mixture latent distribution
//! `q(z) = Σ_c π_c N(z; μ_c, Σ_c)` with `π = softmax(ρ)`.
//!
//! All densities are kept in log space: at latent dimension 64 the raw
//! component densities underflow `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, axpy, cholesky, dot, gemm, log_sum_exp, softmax, Mat, Rng, SpdMat};

const LOG_TAU: f64 = 1.837_877_066_409_345_5; // ln(2π)

/// Default variance of the initial mean entries.
pub const DEFAULT_MU_INIT_VAR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrior {
    mu: Vec<Vec<f64>>,
    sigma: Vec<SpdMat>,
    rho: Vec<f64>,
}

/// Per-point quantities derived from the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEval {
    pub log_comp_density: Vec<f64>,
    pub log_mix_density: f64,
    /// `δ(z)_c = q(z|c) / q(z)`
    pub delta: Vec<f64>,
    pub log_resp: Vec<f64>,
    /// `q(c|z) = δ(z)_c π_c`
    pub resp: Vec<f64>,
    /// `Σ_c⁻¹ (z − μ_c)` for every component.
    pub precision_residual: Vec<Vec<f64>>,
}

/// A batch of latent vectors with everything the estimators and losses need.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub z: Vec<Vec<f64>>,
    /// Component each `z` was ancestrally drawn from (empty when the points
    /// were supplied externally).
    pub ancestors: Vec<usize>,
    pub log_comp_density: Vec<Vec<f64>>,
    pub log_mix_density: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    pub log_resp: Vec<Vec<f64>>,
    pub resp: Vec<Vec<f64>>,
    pub precision_residual: Vec<Vec<Vec<f64>>>,
    /// Gumbel-Softmax relaxation `C` of the component assignment.
    pub comp_relaxed: Vec<Vec<f64>>,
    /// `argmax_c q(c|z)`.
    pub comp_hard: Vec<usize>,
    pub tau: f64,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z_mat(&self) -> Mat {
        Mat::from_rows(&self.z).expect("latent rows share one dimension")
    }
}

impl MixturePrior {
    /// Means drawn entrywise from `N(0, mu_init_var)`, identity covariances
    /// and uniform mixing weights (`ρ = 0`).
    pub fn init(k: usize, dim: usize, mu_init_var: f64, rng: &mut Rng) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!("prior needs k >= 1 and dim >= 1, got k={k}, dim={dim}")));
        }
        let std = mu_init_var.sqrt();
        let mu = (0..k).map(|_| rng.sample_normal(dim).into_iter().map(|v| v * std).collect()).collect();
        Ok(MixturePrior { mu, sigma: vec![SpdMat::identity(dim); k], rho: vec![0.0; k] })
    }

    pub fn from_parts(mu: Vec<Vec<f64>>, sigma: Vec<SpdMat>, rho: Vec<f64>) -> Result<Self> {
        let k = mu.len();
        if k == 0 || sigma.len() != k || rho.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "prior parts: {} means, {} covariances, {} rho",
                k,
                sigma.len(),
                rho.len()
            )));
        }
        let dim = mu[0].len();
        if mu.iter().any(|m| m.len() != dim) || sigma.iter().any(|s| s.dim() != dim) {
            return Err(Error::ShapeMismatch("prior components disagree on dimension".into()));
        }
        Ok(MixturePrior { mu, sigma, rho })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu[0].len()
    }

    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }

    pub fn mu_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.mu[c]
    }

    pub fn sigma(&self) -> &[SpdMat] {
        &self.sigma
    }

    pub fn set_sigma(&mut self, c: usize, sigma: SpdMat) -> Result<()> {
        if sigma.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!("covariance of dim {} for prior of dim {}", sigma.dim(), self.dim())));
        }
        self.sigma[c] = sigma;
        Ok(())
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    /// Mixing weights `π = softmax(ρ)`.
    pub fn pi(&self) -> Vec<f64> {
        softmax(&self.rho)
    }

    pub fn log_pi(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.rho);
        self.rho.iter().map(|r| r - lse).collect()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimMismatch(format!("latent of length {} for prior of dim {}", z.len(), self.dim())));
        }
        Ok(())
    }

    /// `log N(z; μ_c, Σ_c)`.
    pub fn log_component_density(&self, c: usize, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let r: Vec<f64> = z.iter().zip(&self.mu[c]).map(|(a, b)| a - b).collect();
        let s = &self.sigma[c];
        Ok(-0.5 * (self.dim() as f64 * LOG_TAU + s.log_det() + s.mahalanobis_sq(&r)))
    }

    /// `log q(z)`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let log_pi = self.log_pi();
        let terms = (0..self.k())
            .map(|c| Ok(log_pi[c] + self.log_component_density(c, z)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Density ratios `δ(z)` and responsibilities `q(c|z)` at one point.
    pub fn responsibilities(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.evaluate(z)?;
        Ok((e.delta, e.resp))
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<PointEval> {
        self.check_dim(z)?;
        let d = self.dim() as f64;
        let log_pi = self.log_pi();
        let mut log_comp = Vec::with_capacity(self.k());
        let mut prec = Vec::with_capacity(self.k());
        for (mu, s) in self.mu.iter().zip(&self.sigma) {
            let r: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
            let w = s.solve_lower(&r);
            let maha: f64 = w.iter().map(|v| v * v).sum();
            log_comp.push(-0.5 * (d * LOG_TAU + s.log_det() + maha));
            prec.push(s.solve_upper(&w));
        }
        let joint: Vec<f64> = log_comp.iter().zip(&log_pi).map(|(a, b)| a + b).collect();
        let log_mix = log_sum_exp(&joint);
        let delta = log_comp.iter().map(|l| (l - log_mix).exp()).collect();
        let log_resp: Vec<f64> = joint.iter().map(|j| j - log_mix).collect();
        let resp = log_resp.iter().map(|l| l.exp()).collect();
        Ok(PointEval {
            log_comp_density: log_comp,
            log_mix_density: log_mix,
            delta,
            log_resp,
            resp,
            precision_residual: prec,
        })
    }

    /// Evaluates externally supplied latent vectors and draws their relaxed
    /// component assignments.
    pub fn evaluate_batch(&self, z: Vec<Vec<f64>>, tau: f64, rng: &mut Rng) -> Result<LatentBatch> {
        let noise: Vec<Vec<f64>> = (0..z.len()).map(|_| rng.sample_gumbel(self.k())).collect();
        self.evaluate_batch_with_noise(z, &noise, tau)
    }

    /// Like [`MixturePrior::evaluate_batch`] with the Gumbel noise supplied.
    pub fn evaluate_batch_with_noise(&self, z: Vec<Vec<f64>>, noise: &[Vec<f64>], tau: f64) -> Result<LatentBatch> {
        let b = z.len();
        if noise.len() != b || noise.iter().any(|g| g.len() != self.k()) {
            return Err(Error::ShapeMismatch("one Gumbel vector of length K per point".into()));
        }
        let mut batch = LatentBatch {
            z: Vec::new(),
            ancestors: Vec::new(),
            log_comp_density: Vec::with_capacity(b),
            log_mix_density: Vec::with_capacity(b),
            delta: Vec::with_capacity(b),
            log_resp: Vec::with_capacity(b),
            resp: Vec::with_capacity(b),
            precision_residual: Vec::with_capacity(b),
            comp_relaxed: Vec::with_capacity(b),
            comp_hard: Vec::with_capacity(b),
            tau,
        };
        for zi in &z {
            self.check_dim(zi)?;
        }
        let (k, d) = (self.k(), self.dim());
        let log_pi = self.log_pi();
        let zm = Mat::from_rows(&z)?;
        // Per component: W = R L⁻ᵀ gives the Mahalanobis terms, P = W L⁻¹ = R Σ⁻¹.
        let mut log_comp = vec![vec![0.0; k]; b];
        let mut prec = vec![Vec::with_capacity(k); b];
        let mut r = Mat::zeros(b, d);
        let mut w = Mat::zeros(b, d);
        let mut p = Mat::zeros(b, d);
        for (c, (mu, s)) in self.mu.iter().zip(&self.sigma).enumerate() {
            for i in 0..b {
                for ((o, a), m) in r.row_mut(i).iter_mut().zip(zm.row(i)).zip(mu) {
                    *o = a - m;
                }
            }
            let li = s.chol_inverse();
            gemm(1.0, &r, false, &li, true, 0.0, &mut w);
            gemm(1.0, &w, false, &li, false, 0.0, &mut p);
            let norm_c = d as f64 * LOG_TAU + s.log_det();
            for i in 0..b {
                let maha = dot(w.row(i), w.row(i));
                log_comp[i][c] = -0.5 * (norm_c + maha);
                prec[i].push(p.row(i).to_vec());
            }
        }
        for ((g, lc), pr) in noise.iter().zip(log_comp).zip(prec) {
            let joint: Vec<f64> = lc.iter().zip(&log_pi).map(|(a, b)| a + b).collect();
            let log_mix = log_sum_exp(&joint);
            let delta: Vec<f64> = lc.iter().map(|l| (l - log_mix).exp()).collect();
            let log_resp: Vec<f64> = joint.iter().map(|j| j - log_mix).collect();
            let resp: Vec<f64> = log_resp.iter().map(|l| l.exp()).collect();
            batch.comp_relaxed.push(gumbel_softmax_from_log(&log_resp, g, tau));
            batch.comp_hard.push(argmax(&resp));
            batch.log_comp_density.push(lc);
            batch.log_mix_density.push(log_mix);
            batch.delta.push(delta);
            batch.log_resp.push(log_resp);
            batch.resp.push(resp);
            batch.precision_residual.push(pr);
        }
        batch.z = z;
        Ok(batch)
    }

    /// Ancestral sampling: `c ~ Cat(π)`, then `z = μ_c + L_c ε`.
    pub fn sample(&self, b: usize, tau: f64, rng: &mut Rng) -> Result<LatentBatch> {
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let pi = self.pi();
        let mut ancestors = Vec::with_capacity(b);
        let mut z = Vec::with_capacity(b);
        for _ in 0..b {
            let c = rng.categorical(&pi);
            ancestors.push(c);
            z.push(self.sample_from(c, rng));
        }
        let mut batch = self.evaluate_batch(z, tau, rng)?;
        batch.ancestors = ancestors;
        Ok(batch)
    }

    /// One draw from `q(z|c)`.
    pub fn sample_from(&self, c: usize, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.sample_normal(self.dim());
        let mut z = self.sigma[c].chol_mul(&eps);
        axpy(1.0, &self.mu[c], &mut z);
        z
    }

    pub fn sample_component(&self, c: usize, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        if c >= self.k() {
            return Err(Error::BadComponent { component: c, k: self.k() });
        }
        Ok((0..n).map(|_| self.sample_from(c, rng)).collect())
    }

    /// `μ_C = Σ_c C_c μ_c`.
    pub fn mixture_mean_of_assignment(&self, comp_relaxed: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, mu) in comp_relaxed.iter().zip(&self.mu) {
            axpy(*w, mu, &mut out);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.mu.iter().flatten().all(|v| v.is_finite())
            && self.rho.iter().all(|v| v.is_finite())
            && self.sigma.iter().all(|s| s.full().all_finite() && s.chol().all_finite())
    }

    pub fn to_document(&self) -> PriorDocument {
        PriorDocument {
            k: self.k(),
            dim: self.dim(),
            mu: self.mu.clone(),
            sigma_full: self.sigma.iter().map(|s| s.full().row_vecs()).collect(),
            rho: self.rho.clone(),
        }
    }

    pub fn from_document(doc: &PriorDocument) -> Result<Self> {
        if doc.mu.len() != doc.k || doc.sigma_full.len() != doc.k || doc.rho.len() != doc.k {
            return Err(Error::ShapeMismatch(format!("prior document declares k={} but lists disagree", doc.k)));
        }
        let sigma = doc
            .sigma_full
            .iter()
            .map(|rows| {
                if rows.len() != doc.dim {
                    return Err(Error::ShapeMismatch(format!("covariance with {} rows for dim {}", rows.len(), doc.dim)));
                }
                cholesky(&Mat::from_rows(rows)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let prior = MixturePrior::from_parts(doc.mu.clone(), sigma, doc.rho.clone())?;
        if prior.dim() != doc.dim {
            return Err(Error::ShapeMismatch(format!("means of length {} for dim {}", prior.dim(), doc.dim)));
        }
        Ok(prior)
    }
}

/// JSON form of a [`MixturePrior`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDocument {
    pub k: usize,
    pub dim: usize,
    pub mu: Vec<Vec<f64>>,
    pub sigma_full: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
}

impl Serialize for MixturePrior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixturePrior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = PriorDocument::deserialize(d)?;
        MixturePrior::from_document(&doc).map_err(serde::de::Error::custom)
    }
}

/// `softmax((log resp + g) / τ)` with fresh Gumbel noise `g`.
pub fn gumbel_softmax_assign(resp: &[f64], tau: f64, rng: &mut Rng) -> Vec<f64> {
    let noise = rng.sample_gumbel(resp.len());
    let log_resp: Vec<f64> = resp.iter().map(|r| r.ln()).collect();
    gumbel_softmax_from_log(&log_resp, &noise, tau)
}

/// Gumbel-Softmax with explicit noise, taking log-probabilities as logits.
pub fn gumbel_softmax_from_log(log_resp: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = log_resp.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    softmax(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component(sep: f64, pi0: f64) -> MixturePrior {
        let rho0 = (pi0 / (1.0 - pi0)).ln();
        MixturePrior::from_parts(
            vec![vec![-sep / 2.0, 0.0], vec![sep / 2.0, 0.0]],
            vec![SpdMat::identity(2), SpdMat::identity(2)],
            vec![rho0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn init_values() {
        let mut rng = Rng::new(0);
        let p = MixturePrior::init(2, 64, DEFAULT_MU_INIT_VAR, &mut rng).unwrap();
        assert_eq!(p.pi(), vec![0.5, 0.5]);
        assert!(p.sigma().iter().all(|s| s.full() == &Mat::identity(64)));
        let p1 = MixturePrior::init(1, 3, DEFAULT_MU_INIT_VAR, &mut rng).unwrap();
        assert_eq!(p1.pi(), vec![1.0]);
        let a = MixturePrior::init(3, 4, 0.1, &mut Rng::new(11)).unwrap();
        let b = MixturePrior::init(3, 4, 0.1, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        assert!(MixturePrior::init(0, 4, 0.1, &mut rng).is_err());
    }

    #[test]
    fn init_mean_variance() {
        let p = MixturePrior::init(4, 5000, 0.1, &mut Rng::new(2)).unwrap();
        let all: Vec<f64> = p.mu().iter().flatten().copied().collect();
        let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
        assert!((var - 0.1).abs() < 0.005, "{var}");
    }

    #[test]
    fn single_component_responsibility() {
        let p = MixturePrior::init(1, 3, 0.1, &mut Rng::new(1)).unwrap();
        let batch = p.sample(50, 0.01, &mut Rng::new(2)).unwrap();
        for i in 0..50 {
            assert!((batch.delta[i][0] - 1.0).abs() < 1e-12);
            assert!((batch.resp[i][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn well_separated_responsibility() {
        let p = two_component(10.0, 0.5);
        let (_, resp) = p.responsibilities(&p.mu()[0].clone()).unwrap();
        assert!(resp[0] > 0.999);
    }

    #[test]
    fn equidistant_point_is_split() {
        let p = two_component(3.0, 0.5);
        let (_, resp) = p.responsibilities(&[0.0, 0.7]).unwrap();
        assert!((resp[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn responsibilities_match_bayes_rule() {
        // scalar oracle: N(z; m, 1) = exp(-(z-m)²/2) / sqrt(2π)
        let p = MixturePrior::from_parts(
            vec![vec![-1.0], vec![1.5]],
            vec![SpdMat::identity(1), cholesky(&Mat::from_diag(&[4.0])).unwrap()],
            vec![(0.7f64 / 0.3).ln(), 0.0],
        )
        .unwrap();
        let z = 0.4;
        let n0 = (-(z + 1.0f64).powi(2) / 2.0).exp() / (std::f64::consts::TAU).sqrt();
        let n1 = (-(z - 1.5f64).powi(2) / 8.0).exp() / (std::f64::consts::TAU * 4.0).sqrt();
        let q = 0.7 * n0 + 0.3 * n1;
        let (delta, resp) = p.responsibilities(&[z]).unwrap();
        assert!((delta[0] - n0 / q).abs() < 1e-12);
        assert!((delta[1] - n1 / q).abs() < 1e-12);
        assert!((resp[0] - 0.7 * n0 / q).abs() < 1e-12);
        assert!((resp[1] - 0.3 * n1 / q).abs() < 1e-12);
    }

    #[test]
    fn ancestor_frequencies_follow_pi() {
        let p = two_component(2.0, 0.7);
        let batch = p.sample(100_000, 1.0, &mut Rng::new(3)).unwrap();
        let f0 = batch.ancestors.iter().filter(|&&c| c == 0).count() as f64 / 1e5;
        assert!((f0 - 0.7).abs() < 0.01);
    }

    #[test]
    fn component_sample_means() {
        let p = MixturePrior::init(3, 2, 1.0, &mut Rng::new(4)).unwrap();
        let mut rng = Rng::new(5);
        let n = 100_000;
        for c in 0..3 {
            let xs = p.sample_component(c, n, &mut rng).unwrap();
            for j in 0..2 {
                let m = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
                assert!((m - p.mu()[c][j]).abs() < 4.0 / (n as f64).sqrt());
            }
        }
        assert!(p.sample_component(3, 1, &mut rng).is_err());
    }

    #[test]
    fn gumbel_softmax_examples() {
        let mut rng = Rng::new(6);
        let hits = (0..1000)
            .filter(|_| argmax(&gumbel_softmax_assign(&[0.999, 0.001], 0.01, &mut rng)) == 0)
            .count();
        assert!((hits as f64 / 1000.0 - 0.999).abs() <= 0.01);

        for &tau in &[0.01, 0.1, 1.0, 10.0] {
            let c = gumbel_softmax_assign(&[0.2, 0.5, 0.3], tau, &mut rng);
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        let c = gumbel_softmax_from_log(&[0.6f64.ln(), 0.4f64.ln()], &[0.1, -0.2], 1e-6);
        assert!(c[0] > 1.0 - 1e-6);
    }

    #[test]
    fn assignment_mean() {
        let p = MixturePrior::from_parts(
            vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-4.0, 1.0]],
            vec![SpdMat::identity(2); 3],
            vec![0.0; 3],
        )
        .unwrap();
        assert_eq!(p.mixture_mean_of_assignment(&[0.0, 1.0, 0.0]), vec![0.0, 2.0]);
        assert_eq!(p.mixture_mean_of_assignment(&[0.5, 0.5, 0.0]), vec![0.5, 1.0]);
        let m = p.mixture_mean_of_assignment(&[0.2, 0.3, 0.5]);
        assert!((m[0] - (0.2 - 2.0)).abs() < 1e-15);
        assert!((m[1] - (0.6 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn log_density_examples() {
        let p = MixturePrior::from_parts(vec![vec![0.0, 0.0]], vec![SpdMat::identity(2)], vec![0.0]).unwrap();
        assert!((p.log_density(&[0.0, 0.0]).unwrap() + std::f64::consts::TAU.ln()).abs() < 1e-14);

        let q = MixturePrior::init(3, 2, 1.0, &mut Rng::new(7)).unwrap();
        let shift = [3.0, -1.5];
        let mut moved = q.clone();
        for c in 0..3 {
            moved.mu_mut(c).iter_mut().zip(&shift).for_each(|(m, s)| *m += s);
        }
        let z = [0.3, 0.2];
        let zs = [z[0] + shift[0], z[1] + shift[1]];
        assert!((q.log_density(&z).unwrap() - moved.log_density(&zs).unwrap()).abs() < 1e-12);
        assert!(q.log_density(&[0.0]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // midpoint rule on [-8, 8]² for a 2-d mixture
        let p = MixturePrior::from_parts(
            vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
            vec![
                cholesky(&Mat::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap()).unwrap(),
                cholesky(&Mat::from_diag(&[0.4, 1.2])).unwrap(),
            ],
            vec![0.3, -0.2],
        )
        .unwrap();
        let n = 400;
        let h = 16.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = [-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h];
                total += p.log_density(&z).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn document_round_trip() {
        let p = MixturePrior::init(3, 4, 0.1, &mut Rng::new(8)).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: MixturePrior = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        let bad = r#"{"k":1,"dim":1,"mu":[[0.0]],"sigma_full":[[[-1.0]]],"rho":[0.0]}"#;
        assert!(serde_json::from_str::<MixturePrior>(bad).is_err());
    }
}
