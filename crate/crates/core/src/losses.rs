//! Adversarial, contrastive and probe losses with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Mlp, MlpGrads};
use crate::numerics::{gemm, log_sum_exp, Mat, Rng};

/// Below this norm a vector has no direction and cosine similarity is
/// undefined.
pub const MIN_NORM: f64 = 1e-12;

/// Floor on `sin θ` in the derivative of `cos(θ + m)` with respect to
/// `cos θ`. The margin logit has a kink at exact alignment; the floor keeps
/// its gradient finite there.
pub const MARGIN_SIN_FLOOR: f64 = 1e-6;

/// Which quantities shrink linearly to zero over training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Decay {
    Off,
    /// Margin `m` and contrastive weight `λ`; `s` held fixed.
    MarginAndLambda,
    /// Scale `s` and `λ`; `m` held fixed.
    ScaleAndLambda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct LossConfig {
    pub lambda_c: f64,
    pub scale_s: f64,
    pub margin_m: f64,
    pub tau: f64,
    pub lp_coeff: f64,
    pub decay: Decay,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_c: 4.0,
            scale_s: 2.0,
            margin_m: 0.5,
            tau: 0.01,
            lp_coeff: 10.0,
            decay: Decay::MarginAndLambda,
        }
    }
}

/// Loss coefficients in effect at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coeffs {
    pub lambda_c: f64,
    pub scale_s: f64,
    pub margin_m: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lambda_c >= 0.0) {
            return bad("lambda_c must be >= 0");
        }
        if !(self.scale_s > 0.0) {
            return bad("scale_s must be > 0");
        }
        if !(self.margin_m >= 0.0 && self.margin_m < std::f64::consts::FRAC_PI_2) {
            return bad("margin_m must lie in [0, pi/2)");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.lp_coeff >= 0.0) {
            return bad("lp_coeff must be >= 0");
        }
        Ok(())
    }

    /// Coefficients after linear decay: `x(step) = x₀·(1 − step/total)`,
    /// clamped at 0, reaching 0 exactly at `step = total`.
    pub fn at_step(&self, step: u64, total: u64) -> Coeffs {
        let f = if total == 0 { 1.0 } else { (1.0 - step as f64 / total as f64).max(0.0) };
        let base = Coeffs { lambda_c: self.lambda_c, scale_s: self.scale_s, margin_m: self.margin_m };
        match self.decay {
            Decay::Off => base,
            Decay::MarginAndLambda => Coeffs { lambda_c: base.lambda_c * f, margin_m: base.margin_m * f, ..base },
            Decay::ScaleAndLambda => Coeffs { lambda_c: base.lambda_c * f, scale_s: base.scale_s * f, ..base },
        }
    }
}

/// `ℓ^a = −D(G(z))`.
pub fn adv_loss_g(d_of_gz: f64) -> f64 {
    -d_of_gz
}

/// Critic loss `mean(d_fake) − mean(d_real)`.
pub fn adv_loss_d(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.len() != d_fake.len() {
        return Err(Error::ShapeMismatch(format!("{} real vs {} fake scores", d_real.len(), d_fake.len())));
    }
    if d_real.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = d_real.len() as f64;
    Ok(d_fake.iter().sum::<f64>() / b - d_real.iter().sum::<f64>() / b)
}

/// One-sided Lipschitz penalty `coeff · mean_i max(0, ‖∇D(x̂_i)‖ − 1)²` on
/// random interpolates `x̂_i = u_i x_real_i + (1 − u_i) x_fake_i`, with its
/// gradient with respect to the critic parameters.
pub fn lipschitz_penalty(d: &Mlp, x_real: &Mat, x_fake: &Mat, coeff: f64, rng: &mut Rng) -> Result<(f64, MlpGrads)> {
    if x_real.shape() != x_fake.shape() {
        return Err(Error::ShapeMismatch(format!(
            "real batch {:?} vs fake batch {:?}",
            x_real.shape(),
            x_fake.shape()
        )));
    }
    let (b, dim) = x_real.shape();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut xh = Mat::zeros(b, dim);
    for i in 0..b {
        let u = rng.uniform();
        let (r, f) = (x_real.row(i), x_fake.row(i));
        for (o, (a, c)) in xh.row_mut(i).iter_mut().zip(r.iter().zip(f)) {
            *o = u * a + (1.0 - u) * c;
        }
    }
    lipschitz_penalty_at(d, &xh, coeff)
}

/// The penalty evaluated at given interpolates.
pub fn lipschitz_penalty_at(d: &Mlp, xh: &Mat, coeff: f64) -> Result<(f64, MlpGrads)> {
    let (g, tape) = d.input_grad(xh)?;
    let b = xh.rows() as f64;
    let mut value = 0.0;
    let mut dg = Mat::zeros(g.rows(), g.cols());
    for i in 0..g.rows() {
        let row = g.row(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let excess = n - 1.0;
        if excess > 0.0 {
            value += excess * excess;
            let k = coeff * 2.0 * excess / (n * b);
            dg.row_mut(i).iter_mut().zip(row).for_each(|(o, v)| *o = k * v);
        }
    }
    let grads = d.input_grad_backward(&tape, &dg)?;
    Ok((coeff * value / b, grads))
}

/// `cos(θ + m)` and its derivative with respect to `c = cos θ`.
#[inline]
pub fn margin_logit(c: f64, m: f64) -> (f64, f64) {
    if m == 0.0 {
        return (c, 1.0);
    }
    let sin = (1.0 - c * c).max(0.0).sqrt();
    let (sm, cm) = m.sin_cos();
    (c * cm - sin * sm, cm + c * sm / sin.max(MARGIN_SIN_FLOOR))
}

/// Rows scaled to unit length, and the original norms.
fn normalize_rows(x: &Mat, what: &'static str) -> Result<(Mat, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let r = out.row_mut(i);
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n >= MIN_NORM) {
            return Err(Error::DegenerateVector(what));
        }
        r.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Chains `g = ∂L/∂cos` (rows: left vectors, cols: right vectors) back to the
/// unnormalized inputs: `∂cos_ij/∂x_i = (ŷ_j − cos_ij x̂_i)/‖x_i‖`.
fn cosine_pullback(g: &Mat, cos: &Mat, xh: &Mat, xn: &[f64], yh: &Mat, yn: &[f64]) -> (Mat, Mat) {
    let mut dx = Mat::zeros(xh.rows(), xh.cols());
    gemm(1.0, g, false, yh, false, 0.0, &mut dx);
    for i in 0..xh.rows() {
        let gc: f64 = g.row(i).iter().zip(cos.row(i)).map(|(a, b)| a * b).sum();
        let xr = xh.row(i);
        for (o, x) in dx.row_mut(i).iter_mut().zip(xr) {
            *o = (*o - gc * x) / xn[i];
        }
    }
    let mut dy = Mat::zeros(yh.rows(), yh.cols());
    gemm(1.0, g, true, xh, false, 0.0, &mut dy);
    for j in 0..yh.rows() {
        let gc: f64 = (0..g.rows()).map(|i| g.get(i, j) * cos.get(i, j)).sum();
        let yr = yh.row(j);
        for (o, y) in dy.row_mut(j).iter_mut().zip(yr) {
            *o = (*o - gc * y) / yn[j];
        }
    }
    (dx, dy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveOutput {
    /// `ℓ^c(z^i)` per sample.
    pub losses: Vec<f64>,
    /// Gradient of `Σ_i ℓ^c(z^i)` with respect to each encoder output.
    pub d_e: Mat,
    /// Gradient of `Σ_i ℓ^c(z^i)` with respect to each assigned mean `μ_C^j`.
    pub d_mu_c: Mat,
}

/// Contrastive loss with additive angular margin on the positive pair:
/// `ℓ^c_i = −log[ exp(s·cos(θ_ii + m)) / ((1/B)(exp(s·cos(θ_ii + m)) + Σ_{j≠i} exp(s·cos θ_ij))) ]`.
pub fn contrastive_loss(e: &Mat, mu_c: &Mat, s: f64, m: f64) -> Result<ContrastiveOutput> {
    if e.shape() != mu_c.shape() {
        return Err(Error::ShapeMismatch(format!("encodings {:?} vs means {:?}", e.shape(), mu_c.shape())));
    }
    let b = e.rows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let (eh, en) = normalize_rows(e, "encoder output")?;
    let (mh, mn) = normalize_rows(mu_c, "assigned mean")?;
    let mut cos = Mat::zeros(b, b);
    gemm(1.0, &eh, false, &mh, true, 0.0, &mut cos);
    let log_b = (b as f64).ln();
    let mut losses = Vec::with_capacity(b);
    let mut g = Mat::zeros(b, b);
    let mut logits = vec![0.0; b];
    for i in 0..b {
        logits.copy_from_slice(cos.row(i));
        let (phi, dphi) = margin_logit(cos.get(i, i), m);
        logits[i] = phi;
        logits.iter_mut().for_each(|v| *v *= s);
        let lse = log_sum_exp(&logits);
        losses.push(lse - logits[i] - log_b);
        let gr = g.row_mut(i);
        for j in 0..b {
            gr[j] = s * (logits[j] - lse).exp();
        }
        gr[i] = (gr[i] - s) * dphi;
    }
    let (d_e, d_mu_c) = cosine_pullback(&g, &cos, &eh, &en, &mh, &mn);
    Ok(ContrastiveOutput { losses, d_e, d_mu_c })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutput {
    /// Mean loss over all probes.
    pub loss: f64,
    /// Per-probe losses, grouped by component.
    pub losses: Vec<Vec<f64>>,
    /// Gradient of `loss` with respect to each encoded probe, per component.
    pub d_enc: Vec<Mat>,
    /// Gradient of `loss` with respect to each mean `μ_k`.
    pub d_mu: Vec<Vec<f64>>,
}

/// Softmax cross-entropy of each encoded probe against all component means,
/// with scale `s` on every logit and margin `m` on the target logit.
/// `encoded[c]` holds the encodings of the probes for component `c`; empty
/// groups are skipped, but at least one probe is required.
pub fn probe_loss(encoded: &[Mat], mu: &[Vec<f64>], s: f64, m: f64) -> Result<ProbeOutput> {
    let k = mu.len();
    if k < 2 {
        return Err(Error::InvalidConfig("probe loss needs at least 2 components".into()));
    }
    if encoded.len() != k {
        return Err(Error::ShapeMismatch(format!("{} probe groups for {k} components", encoded.len())));
    }
    let total: usize = encoded.iter().map(Mat::rows).sum();
    if total == 0 {
        return Err(Error::EmptyProbeSet(0));
    }
    let dim = mu[0].len();
    let mu_mat = Mat::from_rows(mu)?;
    let (mh, mn) = normalize_rows(&mu_mat, "component mean")?;
    let mut d_mu = Mat::zeros(k, dim);
    let mut losses = Vec::with_capacity(k);
    let mut d_enc = Vec::with_capacity(k);
    let mut loss = 0.0;
    let inv_total = 1.0 / total as f64;
    for (c, enc) in encoded.iter().enumerate() {
        if enc.rows() == 0 {
            losses.push(Vec::new());
            d_enc.push(Mat::zeros(0, dim));
            continue;
        }
        if enc.cols() != dim {
            return Err(Error::ShapeMismatch(format!("probe encodings have width {}, means {dim}", enc.cols())));
        }
        let (eh, en) = normalize_rows(enc, "encoded probe")?;
        let mut cos = Mat::zeros(enc.rows(), k);
        gemm(1.0, &eh, false, &mh, true, 0.0, &mut cos);
        let mut g = Mat::zeros(enc.rows(), k);
        let mut group = Vec::with_capacity(enc.rows());
        let mut logits = vec![0.0; k];
        for i in 0..enc.rows() {
            logits.copy_from_slice(cos.row(i));
            let (phi, dphi) = margin_logit(cos.get(i, c), m);
            logits[c] = phi;
            logits.iter_mut().for_each(|v| *v *= s);
            let lse = log_sum_exp(&logits);
            let l = lse - logits[c];
            group.push(l);
            loss += l * inv_total;
            let gr = g.row_mut(i);
            for j in 0..k {
                gr[j] = s * (logits[j] - lse).exp() * inv_total;
            }
            gr[c] = (gr[c] - s * inv_total) * dphi;
        }
        let (de, dm) = cosine_pullback(&g, &cos, &eh, &en, &mh, &mn);
        d_mu.add_scaled(1.0, &dm)?;
        losses.push(group);
        d_enc.push(de);
    }
    Ok(ProbeOutput { loss, losses, d_enc, d_mu: d_mu.row_vecs() })
}

/// Appends `rounds` mixup rounds: each pairs every probe with a random
/// permutation partner and adds `λ'x_i + (1 − λ')x_perm(i)`, `λ' ~ Beta(α, α)`.
/// Returns `M(rounds + 1)` vectors, originals first.
pub fn mixup_augment(probes: &[Vec<f64>], rounds: usize, alpha: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = probes.to_vec();
    for _ in 0..rounds {
        let perm = rng.permutation(probes.len());
        for (i, &j) in perm.iter().enumerate() {
            let l = rng.symmetric_beta(alpha);
            out.push(probes[i].iter().zip(&probes[j]).map(|(a, b)| l * a + (1.0 - l) * b).collect());
        }
    }
    out
}
