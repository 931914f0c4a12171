//! Self-check of the estimators against the quadratic closed forms, the
//! covariance-update guarantee and the variance ordering against the
//! explicit baseline. Faults can be injected to confirm the checks bite.

use std::cell::Cell;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::oracle::{
    closed_targets, monte_carlo, random_spd, random_symmetric, variance_comparison, McEstimate, QuadraticLoss,
};
use super::{pd_update, PriorGradients};
use crate::error::Result;
use crate::mixture::MixturePrior;
use crate::numerics::{cholesky, norm, sym_eigen, Mat, Rng, SpdMat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Smaller sample size used to check the `1/√N` error rate.
    pub n_samples_small: usize,
    pub chunk: usize,
    pub ks: Vec<usize>,
    pub dims: Vec<usize>,
    pub rel_tol: f64,
    pub pd_trials: usize,
    pub variance_trials: usize,
    pub variance_samples: usize,
    pub variance_min_wins: usize,
}

impl VerifyConfig {
    /// Small sample sizes and a loose tolerance, for smoke runs.
    pub fn quick() -> Self {
        VerifyConfig {
            n_samples: 40_000,
            n_samples_small: 4_000,
            chunk: 200,
            ks: vec![1, 2],
            dims: vec![2],
            rel_tol: 0.2,
            pd_trials: 200,
            variance_trials: 20,
            variance_min_wins: 18,
            ..VerifyConfig::default()
        }
    }
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            n_samples: 1_000_000,
            n_samples_small: 100_000,
            chunk: 1000,
            ks: vec![1, 2, 4],
            dims: vec![2, 4, 8],
            rel_tol: 0.02,
            pd_trials: 10_000,
            variance_trials: 100,
            variance_samples: 1000,
            variance_min_wins: 95,
        }
    }
}

/// Deliberate estimator corruption, used to prove the suite detects errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    FlipMuSign,
    FlipSigmaSign,
    FlipRhoSign,
}

impl Fault {
    pub fn apply(self, g: &mut PriorGradients) {
        match self {
            Fault::None => {}
            Fault::FlipMuSign => g.d_mu.iter_mut().flatten().for_each(|v| *v = -*v),
            Fault::FlipSigmaSign => g.d_sigma.iter_mut().for_each(|m| m.scale_in_place(-1.0)),
            Fault::FlipRhoSign => g.d_rho.iter_mut().for_each(|v| *v = -*v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    /// Measured quantity (relative error, count, eigenvalue, ...).
    pub value: f64,
    pub threshold: f64,
    /// Standard error attached to `value`, when it is a Monte Carlo error.
    pub se: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<OracleCheck>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<44} {:>12} {:>12} {:>12}  result", "check", "value", "threshold", "se");
        for c in &self.checks {
            let se = c.se.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
            let _ = writeln!(
                s,
                "{:<44} {:>12.4e} {:>12.4e} {:>12}  {}",
                c.name,
                c.value,
                c.threshold,
                se,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// A mixture and quadratic loss scaled so that every closed-form gradient is
/// well away from zero relative to its Monte Carlo noise.
pub fn oracle_instance(k: usize, d: usize, rng: &mut Rng) -> (MixturePrior, QuadraticLoss) {
    let mu = (0..k).map(|_| rng.sample_normal(d).into_iter().map(|v| 0.2 * v).collect()).collect();
    // geometric covariance scales keep every f_c far from the mixture mean L
    let sigma = (0..k)
        .map(|c| {
            let s = random_spd(d, 0.5, rng);
            let scale = 2f64.powf(c as f64 - (k as f64 - 1.0) / 2.0);
            cholesky(&s.full().scale(scale)).expect("scaled SPD")
        })
        .collect();
    let rho = rng.sample_normal(k).into_iter().map(|v| 0.5 * v).collect();
    let prior = MixturePrior::from_parts(mu, sigma, rho).expect("consistent parts");
    // |2Aμ_c + b| near |A|_F balances the noise of the mean and covariance
    // estimators, and the small means keep it away from zero
    let a = random_spd(d, 0.5, rng).full().clone();
    let dir = rng.sample_normal(d);
    let b = dir.iter().map(|v| v * a.frobenius_norm() / norm(&dir)).collect();
    let loss = QuadraticLoss::new(a, b);
    (prior, loss)
}

/// Overlapping four-component mixture used for the variance comparison.
pub fn overlapping_instance(d: usize, rng: &mut Rng) -> (MixturePrior, QuadraticLoss) {
    let mu = (0..4).map(|_| rng.sample_normal(d).into_iter().map(|v| 0.5 * v).collect()).collect();
    let prior = MixturePrior::from_parts(mu, vec![SpdMat::identity(d); 4], vec![0.0; 4]).expect("consistent parts");
    let loss = QuadraticLoss::random(d, rng);
    (prior, loss)
}

pub struct IdentityErrors {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Per-component relative errors of an estimate against the closed forms.
/// Mixing-parameter errors are absolute when `K = 1` (the target is zero).
pub fn identity_errors(est: &PriorGradients, prior: &MixturePrior, loss: &QuadraticLoss) -> IdentityErrors {
    let k = prior.k();
    let rho_true = loss.closed_grad_rho(prior);
    let mut out = IdentityErrors { mu: vec![], sigma: vec![], rho: vec![] };
    for c in 0..k {
        let t = loss.closed_grad_mu(prior, c);
        let diff: Vec<f64> = est.d_mu[c].iter().zip(&t).map(|(a, b)| a - b).collect();
        out.mu.push(norm(&diff) / norm(&t));
        let ts = loss.closed_grad_sigma(prior, c);
        let neg = est.d_sigma[c].scale(-1.0);
        out.sigma.push(neg.sub(&ts).expect("same shape").frobenius_norm() / ts.frobenius_norm());
        let err = (est.d_rho[c] - rho_true[c]).abs();
        out.rho.push(if k == 1 { err } else { err / rho_true[c].abs() });
    }
    out
}

fn push(checks: &mut Vec<OracleCheck>, name: String, value: f64, threshold: f64, se: Option<f64>, pass: bool) {
    checks.push(OracleCheck { name, value, threshold, se, pass });
}

pub fn run(cfg: &VerifyConfig, fault: Fault) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(cfg.seed);
    let sqrt10 = (cfg.n_samples as f64 / cfg.n_samples_small as f64).sqrt();

    for &k in &cfg.ks {
        for &d in &cfg.dims {
            let (prior, loss) = oracle_instance(k, d, &mut rng);
            let worst_asym = Cell::new(0.0_f64);
            let worst_rho_sum = Cell::new(0.0_f64);
            let tamper = |g: &mut PriorGradients| {
                for m in &g.d_sigma {
                    worst_asym.set(worst_asym.get().max(m.max_abs_diff(&m.transpose())));
                }
                worst_rho_sum.set(worst_rho_sum.get().max(g.d_rho.iter().sum::<f64>().abs()));
                fault.apply(g);
            };
            let big = monte_carlo(&prior, &loss, cfg.n_samples, cfg.chunk, &mut rng, &tamper)?;
            let small = monte_carlo(&prior, &loss, cfg.n_samples_small, cfg.chunk, &mut rng, &tamper)?;
            let e = identity_errors(&big.mean, &prior, &loss);
            let tag = format!("K={k} d={d}");

            let (mu_err, mu_se) = worst(&e.mu, |c| big.se_mu(c), |c| norm(&loss.closed_grad_mu(&prior, c)));
            push(&mut checks, format!("{tag} mean identity rel err"), mu_err, cfg.rel_tol, Some(mu_se), mu_err <= cfg.rel_tol);
            let (s_err, s_se) = worst(&e.sigma, |c| big.se_sigma(c), |c| loss.closed_grad_sigma(&prior, c).frobenius_norm());
            push(&mut checks, format!("{tag} covariance identity rel err"), s_err, cfg.rel_tol, Some(s_se), s_err <= cfg.rel_tol);
            if k == 1 {
                let v = big.mean.d_rho[0].abs();
                push(&mut checks, format!("{tag} mixing gradient is zero"), v, 0.0, None, v == 0.0);
            } else {
                let rho_true = loss.closed_grad_rho(&prior);
                let (r_err, r_se) = worst(&e.rho, |c| big.se_rho(c), |c| rho_true[c].abs());
                push(&mut checks, format!("{tag} mixing identity rel err"), r_err, cfg.rel_tol, Some(r_se), r_err <= cfg.rel_tol);
            }
            let ratio = se_ratio(&small, &big);
            let lo = sqrt10 / 1.3;
            let hi = sqrt10 * 1.3;
            push(&mut checks, format!("{tag} SE ratio small/large N"), ratio, sqrt10, None, (lo..=hi).contains(&ratio));
            let target = closed_targets(&prior, &loss);
            let z = big.max_z(&target).max(small.max_z(&target));
            let z_star = family_z(2 * big.n_entries());
            push(&mut checks, format!("{tag} max |err|/SE"), z, z_star, None, z <= z_star);
            let asym = worst_asym.get();
            push(&mut checks, format!("{tag} covariance step asymmetry"), asym, 0.0, None, asym == 0.0);
            let rs = worst_rho_sum.get();
            push(&mut checks, format!("{tag} mixing gradient sum"), rs, 1e-9, None, rs <= 1e-9);
        }
    }

    let (min_eig, ok) = pd_trials(cfg.pd_trials, &mut rng)?;
    push(&mut checks, format!("covariance update min eigenvalue ({} trials)", cfg.pd_trials), min_eig, 0.0, None, ok);
    let half = pd_update(&SpdMat::identity(3), &Mat::identity(3).scale(-1.0), 1.0)?;
    let dev = half.full().max_abs_diff(&Mat::identity(3).scale(0.5));
    push(&mut checks, "covariance update I - I case".into(), dev, 0.0, None, dev == 0.0);

    let mut wins = 0;
    for t in 0..cfg.variance_trials {
        let mut trial_rng = Rng::new(cfg.seed.wrapping_add(1000 + t as u64));
        let (prior, loss) = overlapping_instance(2, &mut trial_rng);
        let v = variance_comparison(&prior, &loss, cfg.variance_samples, &mut trial_rng)?;
        if v.implicit <= v.explicit {
            wins += 1;
        }
    }
    push(
        &mut checks,
        format!("implicit variance wins ({} trials)", cfg.variance_trials),
        wins as f64,
        cfg.variance_min_wins as f64,
        None,
        wins >= cfg.variance_min_wins,
    );

    let passed = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, passed })
}

/// Largest relative error, and its relative standard error.
fn worst(errs: &[f64], se: impl Fn(usize) -> f64, scale: impl Fn(usize) -> f64) -> (f64, f64) {
    let c = (0..errs.len()).max_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap_or(0);
    (errs[c], se(c) / scale(c))
}

fn se_ratio(small: &McEstimate, big: &McEstimate) -> f64 {
    let k = small.mean.k();
    let s: f64 = (0..k).map(|c| small.se_mu(c)).sum();
    let b: f64 = (0..k).map(|c| big.se_mu(c)).sum();
    s / b
}

/// Two-sided false-alarm rate of a single 3σ test.
pub const THREE_SIGMA_ALPHA: f64 = 0.0027;

/// z threshold giving a family of `m` comparisons the false-alarm rate of a
/// single 3σ test (Bonferroni).
pub fn family_z(m: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    n.inverse_cdf(1.0 - THREE_SIGMA_ALPHA / (2.0 * m.max(1) as f64))
}

/// Random positive-definite covariances, symmetric steps of widely varying
/// size and `γ ∈ (0, 1]`; returns the smallest eigenvalue seen.
pub fn pd_trials(trials: usize, rng: &mut Rng) -> Result<(f64, bool)> {
    let mut min_eig = f64::INFINITY;
    for _ in 0..trials {
        let d = 1 + rng.below(8);
        let sigma = random_spd(d, 10f64.powf(-3.0 + 3.0 * rng.uniform()), rng);
        let delta = random_symmetric(d, rng).scale(10f64.powf(-2.0 + 3.0 * rng.uniform()));
        let gamma = 1.0 - rng.uniform();
        match pd_update(&sigma, &delta, gamma) {
            Ok(next) => {
                let (vals, _) = sym_eigen(next.full())?;
                min_eig = min_eig.min(vals[0]);
            }
            Err(e) if e.is_numeric() => return Ok((f64::NAN, false)),
            Err(e) => return Err(e),
        }
    }
    Ok((min_eig, min_eig > 0.0))
}
