//! Fully connected networks with hand-written reverse mode.
//!
//! Each layer is `affine → [batch norm] → activation`, with the affine weight
//! optionally spectrally normalized. Batches are row-major `B × dim` matrices.
//! Besides parameter gradients, [`Mlp::backward`] returns the input gradient,
//! which is how `∇_z ℓ` reaches the prior estimators.
//!
//! Training-only side effects (power iteration, batch-norm running
//! statistics) are explicit calls, so `forward` never mutates the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, gemm, norm, Mat, Rng};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative from the input `x` and output `y` of the activation.
    #[inline]
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    fn piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu | Activation::Linear)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct LayerSpec {
    pub out: usize,
    pub activation: Activation,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default)]
    pub spectral_norm: bool,
}

impl LayerSpec {
    pub fn new(out: usize, activation: Activation) -> Self {
        LayerSpec { out, activation, batch_norm: false, spectral_norm: false }
    }

    pub fn bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn sn(mut self) -> Self {
        self.spectral_norm = true;
        self
    }
}

/// Input width and the layers in order; the last layer is the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct NetSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// `z → 128 (BN, ReLU) → 128 (BN, ReLU) → x (tanh)`
    pub fn generator(latent: usize, data: usize, hidden: usize) -> Self {
        NetSpec {
            input: latent,
            layers: vec![
                LayerSpec::new(hidden, Activation::Relu).bn(),
                LayerSpec::new(hidden, Activation::Relu).bn(),
                LayerSpec::new(data, Activation::Tanh),
            ],
        }
    }

    /// `x → 128 (LReLU) → 128 (LReLU) → 1`
    pub fn discriminator(data: usize, hidden: usize) -> Self {
        NetSpec {
            input: data,
            layers: vec![
                LayerSpec::new(hidden, Activation::LeakyRelu),
                LayerSpec::new(hidden, Activation::LeakyRelu),
                LayerSpec::new(1, Activation::Linear),
            ],
        }
    }

    /// `x → 128 (SN, LReLU) → 128 (SN, LReLU) → z (SN)`
    pub fn encoder(data: usize, latent: usize, hidden: usize) -> Self {
        NetSpec {
            input: data,
            layers: vec![
                LayerSpec::new(hidden, Activation::LeakyRelu).sn(),
                LayerSpec::new(hidden, Activation::LeakyRelu).sn(),
                LayerSpec::new(latent, Activation::Linear).sn(),
            ],
        }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.out)
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::BadSpec("input width is 0".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::BadSpec("network has no layers".into()));
        }
        if let Some(i) = self.layers.iter().position(|l| l.out == 0) {
            return Err(Error::BadSpec(format!("layer {i} has width 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Persistent power-iteration vectors; `W_eff = W / (uᵀ W v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
    pub bn: Option<BatchNorm>,
    pub sn: Option<SpectralNorm>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// `uᵀ W v` for spectrally normalized layers, else 1.
    pub fn sigma(&self) -> f64 {
        match &self.sn {
            Some(sn) => dot(&sn.u, &self.w.matvec(&sn.v)),
            None => 1.0,
        }
    }

    pub fn effective_weight(&self) -> Mat {
        match &self.sn {
            Some(_) => self.w.scale(1.0 / self.sigma()),
            None => self.w.clone(),
        }
    }

    /// `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`.
    pub fn power_iterate(&mut self) {
        if let Some(sn) = &mut self.sn {
            let wu = self.w.matvec_t(&sn.u);
            let n = norm(&wu).max(1e-12);
            sn.v = wu.into_iter().map(|x| x / n).collect();
            let wv = self.w.matvec(&sn.v);
            let n = norm(&wv).max(1e-12);
            sn.u = wv.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: NetSpec,
    layers: Vec<Layer>,
}

#[derive(Clone, Debug)]
struct BnTape {
    xhat: Mat,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerTape {
    input: Mat,
    w_eff: Mat,
    sigma: f64,
    bn: Option<BnTape>,
    /// Activation input (after batch norm when present).
    h: Mat,
    out: Mat,
}

/// Everything a forward pass caches for [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTape {
    mode: Mode,
    layers: Vec<LayerTape>,
}

impl ForwardTape {
    pub fn batch(&self) -> usize {
        self.layers[0].input.rows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output(&self) -> &Mat {
        &self.layers.last().expect("nonempty").out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub w: Mat,
    pub b: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

/// Parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: Mat::zeros(l.out_dim(), l.in_dim()),
                    b: vec![0.0; l.out_dim()],
                    gamma: l.bn.as_ref().map(|bn| vec![0.0; bn.gamma.len()]),
                    beta: l.bn.as_ref().map(|bn| vec![0.0; bn.beta.len()]),
                })
                .collect(),
        }
    }

    /// Slices in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w.data());
            out.push(&l.b);
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.data_mut());
            out.push(&mut l.b);
            if let (Some(g), Some(b)) = (&mut l.gamma, &mut l.beta) {
                out.push(g);
                out.push(b);
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for sl in self.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &MlpGrads) {
        let src = other.slices();
        for (dst, src) in self.slices_mut().into_iter().zip(src) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// He-uniform weights (`±√(6 / fan_in)`), zero biases, unit BN scale.
    pub fn build(spec: &NetSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input;
        for ls in &spec.layers {
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..ls.out * fan_in).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
            let w = Mat::from_vec(ls.out, fan_in, data)?;
            let bn = ls.batch_norm.then(|| BatchNorm {
                gamma: vec![1.0; ls.out],
                beta: vec![0.0; ls.out],
                running_mean: vec![0.0; ls.out],
                running_var: vec![1.0; ls.out],
            });
            let sn = ls.spectral_norm.then(|| {
                let u = unit(rng.sample_normal(ls.out));
                let v = unit(w.matvec_t(&u));
                SpectralNorm { u, v }
            });
            layers.push(Layer { w, b: vec![0.0; ls.out], activation: ls.activation, bn, sn });
            fan_in = ls.out;
        }
        Ok(Mlp { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output()
    }

    pub fn n_params(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// Parameter slice lengths, in [`Mlp::param_slices_mut`] order.
    pub fn param_lens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.data().len());
            out.push(l.b.len());
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.len());
                out.push(bn.beta.len());
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.data_mut());
            out.push(&mut l.b);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w.data());
            out.push(&l.b);
            if let Some(bn) = &l.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    /// One power-iteration step on every spectrally normalized layer.
    pub fn power_iterate(&mut self) {
        self.layers.iter_mut().for_each(Layer::power_iterate);
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates (unbiased variance).
    pub fn update_running_stats(&mut self, tape: &ForwardTape) {
        if tape.mode != Mode::Train {
            return;
        }
        let b = tape.batch() as f64;
        let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(bt)) = (&mut layer.bn, &lt.bn) {
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * bt.mean[j];
                    bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * bt.var[j] * unbias;
                }
            }
        }
    }

    pub fn forward(&self, x: &Mat, mode: Mode) -> Result<(Mat, ForwardTape)> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network input width {} but batch has {} columns",
                self.input_dim(),
                x.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let bsz = x.rows();
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        for layer in &self.layers {
            let sigma = layer.sigma();
            let w_eff = layer.effective_weight();
            let mut pre = Mat::zeros(bsz, layer.out_dim());
            for i in 0..bsz {
                pre.row_mut(i).copy_from_slice(&layer.b);
            }
            gemm(1.0, &input, false, &w_eff, true, 1.0, &mut pre);
            let (h, bn_tape) = match &layer.bn {
                None => (pre, None),
                Some(bn) => {
                    let n = layer.out_dim();
                    let (mean, var) = match mode {
                        Mode::Train => column_moments(&pre),
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let mut xhat = pre;
                    let mut h = Mat::zeros(bsz, n);
                    for i in 0..bsz {
                        let xr = xhat.row_mut(i);
                        for j in 0..n {
                            xr[j] = (xr[j] - mean[j]) * inv_std[j];
                        }
                        let hr = h.row_mut(i);
                        for j in 0..n {
                            hr[j] = bn.gamma[j] * xr[j] + bn.beta[j];
                        }
                    }
                    (h, Some(BnTape { xhat, inv_std, mean, var }))
                }
            };
            let mut out = h.clone();
            out.data_mut().iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            tapes.push(LayerTape { input, w_eff, sigma, bn: bn_tape, h, out: out.clone() });
            input = out;
        }
        Ok((input, ForwardTape { mode, layers: tapes }))
    }

    /// Eval-mode forward of a single vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Mat::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m, Mode::Eval)?.0.into_vec())
    }

    /// Reverse pass: gradients of `Σ_ij dy_ij y_ij` with respect to every
    /// parameter and every input entry.
    pub fn backward(&self, tape: &ForwardTape, dy: &Mat) -> Result<(MlpGrads, Mat)> {
        let last = tape.layers.last().ok_or(Error::EmptyBatch)?;
        if tape.layers.len() != self.layers.len() || dy.shape() != last.out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {}x{} for output {}x{}",
                dy.rows(),
                dy.cols(),
                last.out.rows(),
                last.out.cols()
            )));
        }
        let bsz = dy.rows() as f64;
        let mut grads = MlpGrads::zeros_like(self);
        let mut d_out = dy.clone();
        for (li, (layer, lt)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            let mut dh = d_out;
            for (g, (x, y)) in dh.data_mut().iter_mut().zip(lt.h.data().iter().zip(lt.out.data())) {
                *g *= layer.activation.deriv(*x, *y);
            }
            let lg = &mut grads.layers[li];
            let dpre = match (&layer.bn, &lt.bn) {
                (Some(bn), Some(bt)) => {
                    let n = layer.out_dim();
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for i in 0..dh.rows() {
                        let (dr, xr) = (dh.row(i), bt.xhat.row(i));
                        for j in 0..n {
                            dgamma[j] += dr[j] * xr[j];
                            dbeta[j] += dr[j];
                        }
                    }
                    let mut dpre = Mat::zeros(dh.rows(), n);
                    match tape.mode {
                        Mode::Train => {
                            // dx = inv_std/B · (B·dx̂ − Σ dx̂ − x̂ Σ dx̂⊙x̂), with dx̂ = γ dh
                            for i in 0..dh.rows() {
                                let (dr, xr) = (dh.row(i), bt.xhat.row(i));
                                let out = dpre.row_mut(i);
                                for j in 0..n {
                                    let g = bn.gamma[j];
                                    out[j] = g * bt.inv_std[j] / bsz
                                        * (bsz * dr[j] - dbeta[j] - xr[j] * dgamma[j]);
                                }
                            }
                        }
                        Mode::Eval => {
                            for i in 0..dh.rows() {
                                let dr = dh.row(i);
                                let out = dpre.row_mut(i);
                                for j in 0..n {
                                    out[j] = dr[j] * bn.gamma[j] * bt.inv_std[j];
                                }
                            }
                        }
                    }
                    lg.gamma = Some(dgamma);
                    lg.beta = Some(dbeta);
                    dpre
                }
                _ => dh,
            };
            for i in 0..dpre.rows() {
                lg.b.iter_mut().zip(dpre.row(i)).for_each(|(a, b)| *a += b);
            }
            let mut dw_eff = Mat::zeros(layer.out_dim(), layer.in_dim());
            gemm(1.0, &dpre, true, &lt.input, false, 0.0, &mut dw_eff);
            lg.w = sn_pullback(layer, lt, dw_eff);
            let mut dx = Mat::zeros(dpre.rows(), layer.in_dim());
            gemm(1.0, &dpre, false, &lt.w_eff, false, 0.0, &mut dx);
            d_out = dx;
        }
        Ok((grads, d_out))
    }

    /// `∇_x y(x)` per row for a scalar-output network built only from
    /// piecewise-linear activations without batch norm, plus the tape
    /// needed to differentiate a function of that gradient with respect to
    /// the parameters ([`Mlp::input_grad_backward`]).
    pub fn input_grad(&self, x: &Mat) -> Result<(Mat, InputGradTape)> {
        if self.output_dim() != 1 {
            return Err(Error::BadSpec("input gradients need a scalar-output network".into()));
        }
        if self.layers.iter().any(|l| l.bn.is_some() || !l.activation.piecewise_linear()) {
            return Err(Error::BadSpec(
                "input-gradient penalty needs piecewise-linear activations and no batch norm".into(),
            ));
        }
        let (_, tape) = self.forward(x, Mode::Train)?;
        let bsz = x.rows();
        let nl = self.layers.len();
        // t_l = S_l ⊙ r_{l+1}, r_l = t_l W_l (row form); g = r_1
        let mut ts = vec![Mat::zeros(0, 0); nl];
        let mut r: Option<Mat> = None;
        for li in (0..nl).rev() {
            let layer = &self.layers[li];
            let lt = &tape.layers[li];
            let mut t = match r {
                None => Mat::from_vec(bsz, 1, vec![1.0; bsz])?,
                Some(r) => r,
            };
            for (tv, (x, y)) in t.data_mut().iter_mut().zip(lt.h.data().iter().zip(lt.out.data())) {
                *tv *= layer.activation.deriv(*x, *y);
            }
            let mut next = Mat::zeros(bsz, layer.in_dim());
            gemm(1.0, &t, false, &lt.w_eff, false, 0.0, &mut next);
            ts[li] = t;
            r = Some(next);
        }
        let g = r.expect("at least one layer");
        Ok((g, InputGradTape { tape, ts }))
    }

    /// Parameter gradients of `Σ_i ⟨dg_i, ∇_x y(x_i)⟩`. Activation slopes are
    /// locally constant, so biases receive zero gradient.
    pub fn input_grad_backward(&self, igt: &InputGradTape, dg: &Mat) -> Result<MlpGrads> {
        let first = &igt.tape.layers[0];
        if dg.shape() != first.input.shape() {
            return Err(Error::ShapeMismatch("input-gradient adjoint shape".into()));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut dr = dg.clone();
        for li in 0..self.layers.len() {
            let layer = &self.layers[li];
            let lt = &igt.tape.layers[li];
            let t = &igt.ts[li];
            // r_l = t_l W_eff: dW_eff = t_lᵀ dr_l, dt_l = dr_l W_effᵀ
            let mut dw_eff = Mat::zeros(layer.out_dim(), layer.in_dim());
            gemm(1.0, t, true, &dr, false, 0.0, &mut dw_eff);
            grads.layers[li].w = sn_pullback(layer, lt, dw_eff);
            let mut dt = Mat::zeros(dr.rows(), layer.out_dim());
            gemm(1.0, &dr, false, &lt.w_eff, true, 0.0, &mut dt);
            for (v, (x, y)) in dt.data_mut().iter_mut().zip(lt.h.data().iter().zip(lt.out.data())) {
                *v *= layer.activation.deriv(*x, *y);
            }
            dr = dt;
        }
        Ok(grads)
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.layers.iter().all(|l| {
                l.bn.as_ref().is_none_or(|bn| {
                    bn.running_mean.iter().chain(&bn.running_var).all(|v| v.is_finite())
                })
            })
    }
}

/// Tape for differentiating through input gradients.
#[derive(Clone, Debug)]
pub struct InputGradTape {
    tape: ForwardTape,
    ts: Vec<Mat>,
}

/// Maps `∂/∂W_eff` to `∂/∂W` through `W_eff = W / (uᵀWv)` with `u, v` held
/// fixed: `(G − ⟨G, W_eff⟩ u vᵀ) / σ`.
fn sn_pullback(layer: &Layer, lt: &LayerTape, g: Mat) -> Mat {
    match &layer.sn {
        None => g,
        Some(sn) => {
            let inner = dot(g.data(), lt.w_eff.data());
            let mut out = g;
            for (i, &ui) in sn.u.iter().enumerate() {
                let row = out.row_mut(i);
                for (j, &vj) in sn.v.iter().enumerate() {
                    row[j] -= inner * ui * vj;
                }
            }
            out.scale_in_place(1.0 / lt.sigma);
            out
        }
    }
}

/// Per-column mean and biased variance.
fn column_moments(m: &Mat) -> (Vec<f64>, Vec<f64>) {
    let (b, n) = m.shape();
    let mut mean = vec![0.0; n];
    for i in 0..b {
        mean.iter_mut().zip(m.row(i)).for_each(|(a, x)| *a += x);
    }
    mean.iter_mut().for_each(|v| *v /= b as f64);
    let mut var = vec![0.0; n];
    for i in 0..b {
        for (j, x) in m.row(i).iter().enumerate() {
            var[j] += (x - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= b as f64);
    (mean, var)
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v).max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}
