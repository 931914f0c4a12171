//! The training loop: prior parameters by stochastic gradient estimation and
//! plain gradient descent, then generator and encoder, then critic (Adam).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{sample_batch, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{adv_loss_d, contrastive_loss, lipschitz_penalty, mixup_augment, probe_loss, Coeffs, LossConfig};
use crate::mixture::{LatentBatch, MixturePrior, DEFAULT_MU_INIT_VAR};
use crate::neural::{ForwardTape, Mlp, MlpGrads, Mode, NetSpec};
use crate::numerics::{axpy, sgd_step, Adam, Mat, Rng};
use crate::stein::{apply_sigma_update, implicit_grads, GradNorms, PerSampleGrad, PriorGradients};

/// Network layouts; when absent the synthetic presets are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Architecture {
    pub generator: NetSpec,
    pub discriminator: NetSpec,
    pub encoder: NetSpec,
}

impl Architecture {
    pub fn preset(latent: usize, data: usize, hidden: usize) -> Self {
        Architecture {
            generator: NetSpec::generator(latent, data, hidden),
            discriminator: NetSpec::discriminator(data, hidden),
            encoder: NetSpec::encoder(data, latent, hidden),
        }
    }

    fn validate(&self, latent: usize, data: usize) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::InvalidConfig(what.into())) };
        check(self.generator.input == latent, "generator input must equal latent_dim")?;
        check(self.generator.output() == data, "generator output must equal the data dimension")?;
        check(self.discriminator.input == data, "discriminator input must equal the data dimension")?;
        check(self.discriminator.output() == 1, "discriminator output must be 1")?;
        check(self.encoder.input == data, "encoder input must equal the data dimension")?;
        check(self.encoder.output() == latent, "encoder output must equal latent_dim")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct TrainConfig {
    pub batch_b: usize,
    pub steps: u64,
    /// Base network rate η: G and E use η, D uses 4η.
    pub eta: f64,
    /// Base prior rate γ: μ uses 10γ, Σ and ρ use γ.
    pub gamma: f64,
    pub loss: LossConfig,
    pub d_steps_per_g: usize,
    pub seed: u64,
    /// 0 disables checkpoints.
    pub checkpoint_every: u64,
    pub history_every: u64,
    pub k: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub mu_init_var: f64,
    pub architecture: Option<Architecture>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Max-norm clip on each prior gradient block; off when absent.
    pub prior_grad_clip: Option<f64>,
    /// Add the direct dependence of the contrastive loss on μ through
    /// `μ_C = Σ_c C_c μ_c` to the μ gradient.
    pub mu_direct_contrastive: bool,
    /// Include the path through the relaxed assignment in `∇_z ℓ`.
    pub gumbel_path: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_b: 64,
            steps: 20_000,
            eta: 1e-3,
            gamma: 1e-2,
            loss: LossConfig::default(),
            d_steps_per_g: 1,
            seed: 0,
            checkpoint_every: 0,
            history_every: 100,
            k: 8,
            latent_dim: 64,
            hidden: 128,
            mu_init_var: DEFAULT_MU_INIT_VAR,
            architecture: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            prior_grad_clip: None,
            mu_direct_contrastive: true,
            gumbel_path: true,
        }
    }
}

/// Learning rates derived from (η, γ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub d: f64,
    pub g: f64,
    pub e: f64,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl TrainConfig {
    /// Settings for the imbalanced 8-Gaussian runs. On top of the defaults,
    /// means start wider apart (variance 1) and Adam uses β=(0.5, 0.9); with
    /// the defaults, nearby components fuse early and minority modes drift.
    pub fn synthetic_8gauss(seed: u64) -> Self {
        TrainConfig { seed, mu_init_var: 1.0, adam_beta1: 0.5, adam_beta2: 0.9, ..TrainConfig::default() }
    }

    pub fn rates(&self) -> Rates {
        Rates {
            d: 4.0 * self.eta,
            g: self.eta,
            e: self.eta,
            mu: 10.0 * self.gamma,
            sigma: self.gamma,
            rho: self.gamma,
        }
    }

    pub fn architecture_for(&self, data_dim: usize) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| Architecture::preset(self.latent_dim, data_dim, self.hidden))
    }

    pub fn validate(&self, data_dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_b < 2 {
            return bad("batch_b must be >= 2");
        }
        if self.k == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return bad("k, latent_dim and hidden must be positive");
        }
        if self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be >= 1");
        }
        if !(self.eta >= 0.0 && self.gamma >= 0.0) {
            return bad("eta and gamma must be >= 0");
        }
        if !(self.mu_init_var >= 0.0) {
            return bad("mu_init_var must be >= 0");
        }
        if !(self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 >= 0.0 && self.adam_beta2 < 1.0) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.prior_grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("prior_grad_clip must be > 0");
        }
        self.loss.validate()?;
        self.architecture_for(data_dim).validate(self.latent_dim, data_dim)
    }
}

/// Parameter groups in the order one training step updates them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PriorMu,
    PriorSigma,
    PriorRho,
    GenEnc,
    Disc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Step index before the update (0-based).
    pub step: u64,
    pub d_loss: f64,
    pub lp: f64,
    /// Batch mean of `ℓ^a`.
    pub g_loss: f64,
    /// Batch mean of `ℓ^c`.
    pub c_loss: f64,
    pub coeffs: Coeffs,
    /// `π` after the update.
    pub pi: Vec<f64>,
    pub grad_norms: GradNorms,
    #[serde(skip)]
    pub events: Vec<Phase>,
}

/// Exponential moving averages of the reported losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub d_loss: f64,
    pub g_loss: f64,
    pub c_loss: f64,
}

const STATS_DECAY: f64 = 0.99;

impl RunningStats {
    fn update(&mut self, r: &StepReport, first: bool) {
        let a = if first { 0.0 } else { STATS_DECAY };
        self.d_loss = a * self.d_loss + (1.0 - a) * r.d_loss;
        self.g_loss = a * self.g_loss + (1.0 - a) * r.g_loss;
        self.c_loss = a * self.c_loss + (1.0 - a) * r.c_loss;
    }
}

/// The generator-side forward and reverse pass for one latent batch.
pub struct GeneratorPass {
    pub batch: LatentBatch,
    pub x_fake: Mat,
    pub d_fake: Vec<f64>,
    /// Per-sample `ℓ^a + λℓ^c`.
    pub loss: Vec<f64>,
    pub adv_loss: Vec<f64>,
    pub con_loss: Vec<f64>,
    /// Row `i`: `∂/∂z_i` of `Σ_j (ℓ^a_j + λℓ^c_j)`.
    pub dz: Mat,
    /// Gradients of the same batch sum.
    pub g_grads: MlpGrads,
    pub e_grads: MlpGrads,
    /// `Σ_i C^i_c ∂(Σ_j λℓ^c_j)/∂μ_C^i` for every component.
    pub d_mu_direct: Vec<Vec<f64>>,
    g_tape: ForwardTape,
    d_tape: ForwardTape,
}

impl GeneratorPass {
    /// `Σ_i (ℓ^a_i + λℓ^c_i)`.
    pub fn objective(&self) -> f64 {
        self.loss.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub data_dim: usize,
    pub prior: MixturePrior,
    pub g: Mlp,
    pub d: Mlp,
    pub e: Mlp,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_e: Adam,
    pub step: u64,
    pub rng: Rng,
    pub stats: RunningStats,
}

impl TrainState {
    pub fn new(config: TrainConfig, data_dim: usize) -> Result<Self> {
        config.validate(data_dim)?;
        let mut rng = Rng::new(config.seed);
        let arch = config.architecture_for(data_dim);
        let prior = MixturePrior::init(config.k, config.latent_dim, config.mu_init_var, &mut rng)?;
        let g = Mlp::build(&arch.generator, &mut rng)?;
        let d = Mlp::build(&arch.discriminator, &mut rng)?;
        let e = Mlp::build(&arch.encoder, &mut rng)?;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        Ok(TrainState {
            opt_g: Adam::with_betas(g.param_lens(), b1, b2),
            opt_d: Adam::with_betas(d.param_lens(), b1, b2),
            opt_e: Adam::with_betas(e.param_lens(), b1, b2),
            config,
            data_dim,
            prior,
            g,
            d,
            e,
            step: 0,
            rng,
            stats: RunningStats::default(),
        })
    }

    pub fn coeffs(&self) -> Coeffs {
        self.config.loss.at_step(self.step, self.config.steps)
    }

    /// Rows of real data one step consumes: one batch per critic update.
    pub fn rows_per_step(&self) -> usize {
        self.config.batch_b * self.config.d_steps_per_g
    }

    /// Ancestral latent draws with fresh Gumbel noise.
    pub fn sample_latents(&mut self, b: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let pi = self.prior.pi();
        let k = self.prior.k();
        let z = (0..b)
            .map(|_| {
                let c = self.rng.categorical(&pi);
                self.prior.sample_from(c, &mut self.rng)
            })
            .collect();
        let noise = (0..b).map(|_| self.rng.sample_gumbel(k)).collect();
        (z, noise)
    }

    /// Losses, `∇_z` and G/E gradients for fixed latents and Gumbel noise.
    /// Pure apart from reading the state.
    pub fn generator_pass(&self, z: Vec<Vec<f64>>, noise: &[Vec<f64>], coeffs: Coeffs) -> Result<GeneratorPass> {
        let tau = self.config.loss.tau;
        let batch = self.prior.evaluate_batch_with_noise(z, noise, tau)?;
        let b = batch.len();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let (x_fake, g_tape) = self.g.forward(&batch.z_mat(), Mode::Train)?;
        let (d_out, d_tape) = self.d.forward(&x_fake, Mode::Train)?;
        let (enc, e_tape) = self.e.forward(&x_fake, Mode::Train)?;
        let mu_c = Mat::from_rows(
            &batch.comp_relaxed.iter().map(|c| self.prior.mixture_mean_of_assignment(c)).collect::<Vec<_>>(),
        )?;
        let con = contrastive_loss(&enc, &mu_c, coeffs.scale_s, coeffs.margin_m)?;
        let lam = coeffs.lambda_c;

        let d_fake = d_out.into_vec();
        let adv_loss: Vec<f64> = d_fake.iter().map(|&v| -v).collect();
        let loss: Vec<f64> = adv_loss.iter().zip(&con.losses).map(|(a, c)| a + lam * c).collect();

        let (_, mut dx) = self.d.backward(&d_tape, &Mat::from_vec(b, 1, vec![-1.0; b])?)?;
        let (e_grads, dx_c) = self.e.backward(&e_tape, &con.d_e.scale(lam))?;
        dx.add_scaled(1.0, &dx_c)?;
        let (g_grads, mut dz) = self.g.backward(&g_tape, &dx)?;

        let k = self.prior.k();
        let mut d_mu_direct = vec![vec![0.0; self.prior.dim()]; k];
        if lam != 0.0 {
            for i in 0..b {
                let dmc = con.d_mu_c.row(i);
                let c_rel = &batch.comp_relaxed[i];
                for (c, acc) in d_mu_direct.iter_mut().enumerate() {
                    axpy(lam * c_rel[c], dmc, acc);
                }
                if self.config.gumbel_path {
                    // C = softmax((log q(c|z) + g)/τ); ∂log q(c|z)/∂z = −P_c + Σ_k q(k|z) P_k
                    let dc: Vec<f64> = self.prior.mu().iter().map(|m| lam * crate::numerics::dot(dmc, m)).collect();
                    let inner: f64 = dc.iter().zip(c_rel).map(|(a, c)| a * c).sum();
                    let row = dz.row_mut(i);
                    for c in 0..k {
                        let dlr = c_rel[c] * (dc[c] - inner) / tau;
                        if dlr != 0.0 {
                            axpy(-dlr, &batch.precision_residual[i][c], row);
                        }
                    }
                }
            }
        }
        Ok(GeneratorPass {
            batch,
            x_fake,
            d_fake,
            loss,
            adv_loss,
            con_loss: con.losses,
            dz,
            g_grads,
            e_grads,
            d_mu_direct,
            g_tape,
            d_tape,
        })
    }

    /// Stein estimates for the prior from a generator pass.
    pub fn prior_gradients(&self, pass: &GeneratorPass) -> Result<PriorGradients> {
        let pi = self.prior.pi();
        let samples: Vec<PerSampleGrad> = (0..pass.batch.len())
            .map(|i| {
                PerSampleGrad::from_batch(&pass.batch, i, &pi, pass.loss[i], pass.adv_loss[i], pass.dz.row(i).to_vec())
            })
            .collect();
        let mut pg = implicit_grads(&samples, &self.prior)?;
        if self.config.mu_direct_contrastive {
            let inv_b = 1.0 / pass.batch.len() as f64;
            for (g, direct) in pg.d_mu.iter_mut().zip(&pass.d_mu_direct) {
                axpy(inv_b, direct, g);
            }
        }
        if let Some(c) = self.config.prior_grad_clip {
            pg.clip(c);
        }
        Ok(pg)
    }

    /// One iteration. `real` holds `batch_b · d_steps_per_g` rows; the
    /// first `batch_b` rows pair with the generator batch for the critic.
    pub fn train_step(&mut self, real: &Mat) -> Result<StepReport> {
        let bsz = self.config.batch_b;
        if real.rows() != self.rows_per_step() || real.cols() != self.data_dim {
            return Err(Error::ShapeMismatch(format!(
                "real batch {}x{}, expected {}x{}",
                real.rows(),
                real.cols(),
                self.rows_per_step(),
                self.data_dim
            )));
        }
        let coeffs = self.coeffs();
        let rates = self.config.rates();
        self.g.power_iterate();
        self.d.power_iterate();
        self.e.power_iterate();

        let (z, noise) = self.sample_latents(bsz);
        let mut pass = self.generator_pass(z, &noise, coeffs)?;
        let pg = self.prior_gradients(&pass)?;
        let mut events = Vec::with_capacity(5);

        if rates.mu != 0.0 {
            for (c, g) in pg.d_mu.iter().enumerate() {
                sgd_step(self.prior.mu_mut(c), g, rates.mu)?;
            }
        }
        events.push(Phase::PriorMu);
        if rates.sigma != 0.0 {
            for (c, delta) in pg.d_sigma.iter().enumerate() {
                apply_sigma_update(&mut self.prior, c, delta, rates.sigma)?;
            }
        }
        events.push(Phase::PriorSigma);
        if rates.rho != 0.0 {
            sgd_step(self.prior.rho_mut(), &pg.d_rho, rates.rho)?;
        }
        events.push(Phase::PriorRho);

        let inv_b = 1.0 / bsz as f64;
        pass.g_grads.scale(inv_b);
        pass.e_grads.scale(inv_b);
        self.opt_g.step(self.g.param_slices_mut(), pass.g_grads.slices(), rates.g)?;
        self.opt_e.step(self.e.param_slices_mut(), pass.e_grads.slices(), rates.e)?;
        self.g.update_running_stats(&pass.g_tape);
        events.push(Phase::GenEnc);

        let real0 = rows(real, 0, bsz)?;
        let (mut d_loss, mut lp) = self.critic_step(&real0, &pass.x_fake, &pass.d_fake, &pass.d_tape, rates.d)?;
        for s in 1..self.config.d_steps_per_g {
            let (z, noise) = self.sample_latents(bsz);
            let batch = self.prior.evaluate_batch_with_noise(z, &noise, self.config.loss.tau)?;
            let (x_fake, _) = self.g.forward(&batch.z_mat(), Mode::Train)?;
            let (d_out, d_tape) = self.d.forward(&x_fake, Mode::Train)?;
            let real_s = rows(real, s * bsz, bsz)?;
            (d_loss, lp) = self.critic_step(&real_s, &x_fake, d_out.data(), &d_tape, rates.d)?;
        }
        events.push(Phase::Disc);

        let report = StepReport {
            step: self.step,
            d_loss,
            lp,
            g_loss: pass.adv_loss.iter().sum::<f64>() * inv_b,
            c_loss: pass.con_loss.iter().sum::<f64>() * inv_b,
            coeffs,
            pi: self.prior.pi(),
            grad_norms: pg.norms(),
            events,
        };
        self.stats.update(&report, self.step == 0);
        self.step += 1;
        self.check_finite()?;
        if !(report.d_loss.is_finite() && report.g_loss.is_finite() && report.c_loss.is_finite()) {
            return Err(Error::NonFinite(format!("losses at step {}", report.step)));
        }
        Ok(report)
    }

    /// Adam step on `mean(D(fake)) − mean(D(real)) + LP`; returns the loss
    /// including the penalty, and the penalty.
    fn critic_step(
        &mut self,
        real: &Mat,
        x_fake: &Mat,
        d_fake: &[f64],
        fake_tape: &ForwardTape,
        lr: f64,
    ) -> Result<(f64, f64)> {
        let b = real.rows();
        let inv_b = 1.0 / b as f64;
        let (mut grads, _) = self.d.backward(fake_tape, &Mat::from_vec(b, 1, vec![inv_b; b])?)?;
        let (d_real, real_tape) = self.d.forward(real, Mode::Train)?;
        let (gr, _) = self.d.backward(&real_tape, &Mat::from_vec(b, 1, vec![-inv_b; b])?)?;
        grads.accumulate(&gr);
        let lp_coeff = self.config.loss.lp_coeff;
        let mut lp = 0.0;
        if lp_coeff > 0.0 {
            let (v, glp) = lipschitz_penalty(&self.d, real, x_fake, lp_coeff, &mut self.rng)?;
            grads.accumulate(&glp);
            lp = v;
        }
        self.opt_d.step(self.d.param_slices_mut(), grads.slices(), lr)?;
        Ok((adv_loss_d(d_real.data(), d_fake)? + lp, lp))
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.prior.all_finite() {
            return Err(Error::NonFinite("prior".into()));
        }
        for (name, net) in [("generator", &self.g), ("discriminator", &self.d), ("encoder", &self.e)] {
            if !net.all_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    /// Generator output (eval mode) for each latent row.
    pub fn generate(&self, z: &Mat) -> Result<Mat> {
        Ok(self.g.forward(z, Mode::Eval)?.0)
    }

    /// `n` samples from `q(z|c)` pushed through the generator.
    pub fn generate_component(&mut self, c: usize, n: usize) -> Result<Mat> {
        let z = self.prior.sample_component(c, n, &mut self.rng)?;
        if z.is_empty() {
            return Ok(Mat::zeros(0, self.data_dim));
        }
        self.generate(&Mat::from_rows(&z)?)
    }

    /// `G(μ_c)` for every component.
    pub fn generate_means(&self) -> Result<Mat> {
        self.generate(&Mat::from_rows(self.prior.mu())?)
    }

    /// Encoder outputs (eval mode).
    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        Ok(self.e.forward(x, Mode::Eval)?.0)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let state: TrainState = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        state.config.validate(state.data_dim)?;
        Ok(state)
    }
}

fn rows(m: &Mat, start: usize, n: usize) -> Result<Mat> {
    let c = m.cols();
    Mat::from_vec(n, c, m.data()[start * c..(start + n) * c].to_vec())
}

/// Hooks for history records and checkpoints.
pub trait Observer {
    fn on_history(&mut self, _report: &StepReport) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Quiet;

impl Observer for Quiet {}

/// Runs `config.steps` iterations with minibatches drawn with replacement.
/// History is recorded every `history_every` steps and at the last step.
pub fn train(config: TrainConfig, data: &LabeledDataset, obs: &mut dyn Observer) -> Result<(TrainState, Vec<StepReport>)> {
    let mut state = TrainState::new(config, data.dim())?;
    let history = continue_training(&mut state, data, obs)?;
    Ok((state, history))
}

/// Trains a state until its step counter reaches `config.steps`.
pub fn continue_training(state: &mut TrainState, data: &LabeledDataset, obs: &mut dyn Observer) -> Result<Vec<StepReport>> {
    if data.dim() != state.data_dim {
        return Err(Error::DimMismatch(format!("dataset has {} columns, model expects {}", data.dim(), state.data_dim)));
    }
    if data.len() < state.config.batch_b {
        return Err(Error::DatasetTooSmall { n: data.len(), batch: state.config.batch_b });
    }
    let mut history = Vec::new();
    let total = state.config.steps;
    while state.step < total {
        let real = sample_batch(data, state.rows_per_step(), &mut state.rng)?;
        let report = state.train_step(&real)?;
        let done = state.step;
        if state.config.history_every > 0 && (done % state.config.history_every == 0 || done == total) {
            obs.on_history(&report)?;
            history.push(report);
        }
        if state.config.checkpoint_every > 0 && (done % state.config.checkpoint_every == 0 || done == total) {
            obs.on_checkpoint(state)?;
        }
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ManipulationConfig {
    /// Interleaved (train step, probe step) pairs.
    pub steps: u64,
    pub mixup_rounds: usize,
    pub mixup_alpha: f64,
    /// Weight of the probe loss relative to the training objective.
    pub probe_weight: f64,
    /// Whether Σ is among the probe-loss parameters. The probe loss does not
    /// depend on the latent samples, so its Σ gradient is identically zero
    /// and this flag only changes the recorded phases.
    pub include_sigma: bool,
}

impl Default for ManipulationConfig {
    fn default() -> Self {
        ManipulationConfig { steps: 2000, mixup_rounds: 5, mixup_alpha: 1.0, probe_weight: 1.0, include_sigma: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub step: u64,
    pub probe_loss: f64,
}

/// Interleaves training steps with probe-loss steps on E and μ.
/// `probe_sets[c]` holds raw probe vectors for component `c` (empty for
/// components without probes). Probes are mixup-augmented once up front.
pub fn manipulate_attributes(
    state: &mut TrainState,
    probe_sets: &[Vec<Vec<f64>>],
    data: &LabeledDataset,
    cfg: &ManipulationConfig,
    obs: &mut dyn Observer,
) -> Result<Vec<ProbeReport>> {
    let k = state.prior.k();
    if k < 2 {
        return Err(Error::InvalidConfig("attribute manipulation needs at least 2 components".into()));
    }
    if probe_sets.len() != k {
        return Err(Error::ShapeMismatch(format!("{} probe sets for {k} components", probe_sets.len())));
    }
    if probe_sets.iter().all(Vec::is_empty) {
        return Err(Error::EmptyProbeSet(0));
    }
    for set in probe_sets {
        if let Some(p) = set.iter().find(|p| p.len() != state.data_dim) {
            return Err(Error::DimMismatch(format!("probe has {} values, data dimension is {}", p.len(), state.data_dim)));
        }
    }
    if data.dim() != state.data_dim {
        return Err(Error::DimMismatch(format!("dataset has {} columns, model expects {}", data.dim(), state.data_dim)));
    }
    if data.len() < state.config.batch_b {
        return Err(Error::DatasetTooSmall { n: data.len(), batch: state.config.batch_b });
    }
    let augmented: Vec<Mat> = probe_sets
        .iter()
        .map(|set| {
            if set.is_empty() {
                Ok(Mat::zeros(0, state.data_dim))
            } else {
                Mat::from_rows(&mixup_augment(set, cfg.mixup_rounds, cfg.mixup_alpha, &mut state.rng))
            }
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let real = sample_batch(data, state.rows_per_step(), &mut state.rng)?;
        let report = state.train_step(&real)?;
        if state.config.history_every > 0 && state.step % state.config.history_every == 0 {
            obs.on_history(&report)?;
        }
        let loss = probe_step(state, &augmented, cfg.probe_weight)?;
        out.push(ProbeReport { step: report.step, probe_loss: loss });
    }
    Ok(out)
}

/// One descent step of the probe loss on E (Adam) and μ (gradient descent).
pub fn probe_step(state: &mut TrainState, probes: &[Mat], weight: f64) -> Result<f64> {
    let coeffs = state.coeffs();
    let rates = state.config.rates();
    let mut tapes = Vec::with_capacity(probes.len());
    let mut encoded = Vec::with_capacity(probes.len());
    for p in probes {
        if p.rows() == 0 {
            tapes.push(None);
            encoded.push(Mat::zeros(0, state.config.latent_dim));
        } else {
            let (enc, tape) = state.e.forward(p, Mode::Train)?;
            tapes.push(Some(tape));
            encoded.push(enc);
        }
    }
    let out = probe_loss(&encoded, state.prior.mu(), coeffs.scale_s, coeffs.margin_m)?;
    let mut e_grads = MlpGrads::zeros_like(&state.e);
    for (tape, d_enc) in tapes.iter().zip(&out.d_enc) {
        if let Some(t) = tape {
            let (g, _) = state.e.backward(t, &d_enc.scale(weight))?;
            e_grads.accumulate(&g);
        }
    }
    if rates.mu != 0.0 {
        for (c, g) in out.d_mu.iter().enumerate() {
            let g: Vec<f64> = g.iter().map(|v| v * weight).collect();
            sgd_step(state.prior.mu_mut(c), &g, rates.mu)?;
        }
    }
    state.opt_e.step(state.e.param_slices_mut(), e_grads.slices(), rates.e)?;
    state.check_finite()?;
    Ok(out.loss)
}
