//! Finite-difference checks shared by the gradient tests and the acceptance
//! gate. Each returns the worst relative error over its random instances.

#![allow(dead_code)]

use slogan_core::losses::{contrastive_loss, probe_loss};
use slogan_core::neural::{Activation, LayerSpec, Mlp, Mode, NetSpec};
use slogan_core::numerics::{Mat, Rng};

pub const H: f64 = 1e-5;

/// Relative error, but differences at the central-difference rounding
/// level (~1e-9 for O(1) losses) count as agreement; a bias feeding train-mode
/// batch norm has an exactly zero gradient.
pub fn rel_err(a: f64, n: f64) -> f64 {
    if (a - n).abs() < 1e-9 {
        return 0.0;
    }
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn rand_mat(r: usize, c: usize, rng: &mut Rng) -> Mat {
    Mat::from_vec(r, c, rng.sample_normal(r * c)).unwrap()
}

pub fn bump(m: &Mat, i: usize, j: usize, h: f64) -> Mat {
    let mut out = m.clone();
    out.set(i, j, m.get(i, j) + h);
    out
}

pub fn random_spec(rng: &mut Rng, smooth_only: bool) -> NetSpec {
    let depth = 1 + rng.below(3);
    let input = 1 + rng.below(5);
    let acts = if smooth_only {
        vec![Activation::Tanh, Activation::Sigmoid, Activation::Linear]
    } else {
        vec![Activation::Relu, Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid, Activation::Linear]
    };
    let layers = (0..depth)
        .map(|_| LayerSpec {
            out: 1 + rng.below(6),
            activation: acts[rng.below(acts.len())],
            batch_norm: rng.uniform() < 0.4,
            spectral_norm: rng.uniform() < 0.4,
        })
        .collect();
    NetSpec { input, layers }
}

fn weighted(net: &Mlp, x: &Mat, dy: &Mat, mode: Mode) -> f64 {
    let (y, _) = net.forward(x, mode).unwrap();
    y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
}

/// A kink within `H` of any activation input makes central differences
/// meaningless for piecewise-linear layers; such draws are skipped.
pub fn near_kink(net: &Mlp, x: &Mat, mode: Mode) -> bool {
    let mut h = x.clone();
    for l in net.layers() {
        let mut one = Mlp::build(
            &NetSpec { input: l.in_dim(), layers: vec![LayerSpec::new(l.out_dim(), Activation::Linear)] },
            &mut Rng::new(0),
        )
        .unwrap();
        one.layers_mut()[0] = l.clone();
        one.layers_mut()[0].activation = Activation::Linear;
        let (pre, _) = one.forward(&h, mode).unwrap();
        if matches!(l.activation, Activation::Relu | Activation::LeakyRelu)
            && pre.data().iter().any(|v| v.abs() < 1e-3)
        {
            return true;
        }
        let mut full = one.clone();
        full.layers_mut()[0].activation = l.activation;
        h = full.forward(&h, mode).unwrap().0;
    }
    false
}

/// Input and parameter gradients of random networks (mixed activations,
/// batch norm in both modes, spectral norm) against central differences.
pub fn network_fd_worst(seed: u64, instances: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < instances {
        let spec = random_spec(&mut rng, false);
        let mut net = Mlp::build(&spec, &mut rng).unwrap();
        for _ in 0..3 {
            net.power_iterate();
        }
        for l in net.layers_mut() {
            l.b.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
            if let Some(bn) = &mut l.bn {
                bn.gamma.iter_mut().for_each(|g| *g = 1.0 + 0.3 * rng.normal());
                bn.beta.iter_mut().for_each(|b| *b = 0.3 * rng.normal());
                bn.running_mean.iter_mut().for_each(|m| *m = 0.2 * rng.normal());
                bn.running_var.iter_mut().for_each(|v| *v = 0.5 + rng.uniform());
            }
        }
        let mode = if rng.uniform() < 0.5 { Mode::Train } else { Mode::Eval };
        let bsz = 3 + rng.below(4);
        let x = rand_mat(bsz, spec.input, &mut rng);
        if near_kink(&net, &x, mode) {
            continue;
        }
        let dy = rand_mat(bsz, spec.output(), &mut rng);
        let (_, tape) = net.forward(&x, mode).unwrap();
        let (grads, dx) = net.backward(&tape, &dy).unwrap();

        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let n = (weighted(&net, &bump(&x, i, j, H), &dy, mode) - weighted(&net, &bump(&x, i, j, -H), &dy, mode))
                    / (2.0 * H);
                worst = worst.max(rel_err(dx.get(i, j), n));
            }
        }
        let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let mut flat = 0;
        for (slot, &len) in net.param_lens().iter().enumerate() {
            for k in 0..len {
                let mut p = net.clone();
                p.param_slices_mut()[slot][k] += H;
                let mut m = net.clone();
                m.param_slices_mut()[slot][k] -= H;
                let n = (weighted(&p, &x, &dy, mode) - weighted(&m, &x, &dy, mode)) / (2.0 * H);
                worst = worst.max(rel_err(analytic[flat], n));
                flat += 1;
            }
        }
        checked += 1;
    }
    worst
}

/// Gradients of the margin contrastive loss w.r.t. encodings and assigned
/// means, over random batch sizes, dimensions, scales and margins.
pub fn contrastive_fd_worst(seed: u64, instances: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let b = 2 + rng.below(5);
        let d = 2 + rng.below(4);
        let s = 0.5 + 3.5 * rng.uniform();
        let m = 1.2 * rng.uniform();
        let e = rand_mat(b, d, &mut rng);
        let mu = rand_mat(b, d, &mut rng);
        let out = contrastive_loss(&e, &mu, s, m).unwrap();
        let total = |e: &Mat, mu: &Mat| contrastive_loss(e, mu, s, m).unwrap().losses.iter().sum::<f64>();
        for i in 0..b {
            for j in 0..d {
                let n = (total(&bump(&e, i, j, H), &mu) - total(&bump(&e, i, j, -H), &mu)) / (2.0 * H);
                worst = worst.max(rel_err(out.d_e.get(i, j), n));
                let n = (total(&e, &bump(&mu, i, j, H)) - total(&e, &bump(&mu, i, j, -H))) / (2.0 * H);
                worst = worst.max(rel_err(out.d_mu_c.get(i, j), n));
            }
        }
    }
    worst
}

/// Gradients of the probe loss w.r.t. probe encodings and component means.
pub fn probe_fd_worst(seed: u64, instances: usize) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < instances {
        let k = 2 + rng.below(3);
        let d = 2 + rng.below(4);
        let s = 0.5 + 3.5 * rng.uniform();
        let m = 1.2 * rng.uniform();
        let enc: Vec<Mat> = (0..k).map(|_| rand_mat(rng.below(4), d, &mut rng)).collect();
        let mu: Vec<Vec<f64>> = (0..k).map(|_| rng.sample_normal(d)).collect();
        if enc.iter().all(|e| e.rows() == 0) {
            continue;
        }
        let out = probe_loss(&enc, &mu, s, m).unwrap();
        let f = |enc: &[Mat], mu: &[Vec<f64>]| probe_loss(enc, mu, s, m).unwrap().loss;
        for c in 0..k {
            for i in 0..enc[c].rows() {
                for j in 0..d {
                    let mut p = enc.clone();
                    p[c] = bump(&enc[c], i, j, H);
                    let mut q = enc.clone();
                    q[c] = bump(&enc[c], i, j, -H);
                    let n = (f(&p, &mu) - f(&q, &mu)) / (2.0 * H);
                    worst = worst.max(rel_err(out.d_enc[c].get(i, j), n));
                }
            }
            for j in 0..d {
                let mut p = mu.clone();
                p[c][j] += H;
                let mut q = mu.clone();
                q[c][j] -= H;
                let n = (f(&enc, &p) - f(&enc, &q)) / (2.0 * H);
                worst = worst.max(rel_err(out.d_mu[c][j], n));
            }
        }
        checked += 1;
    }
    worst
}
