//! Dense linear algebra, random streams and optimizers shared by the rest of
//! the crate.

mod linalg;
mod mat;
mod optim;
mod rng;

pub use linalg::{cholesky, eigen_map, sqrt_spd, sym_eigen, SpdMat, JACOBI_MAX_SWEEPS, PIVOT_FLOOR};
pub use mat::{axpy, dot, gemm, norm, Mat};
pub use optim::{adam_step, sgd_step, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use rng::Rng;

/// `log Σ exp(v_i)`, shifted by the maximum so large magnitudes neither
/// overflow nor underflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((log_sum_exp(&[1.0, 2.0, 3.0]) - direct).abs() < 1e-14);
        assert!((direct - 3.407_605_964_444_38).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
