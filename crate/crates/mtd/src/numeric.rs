//! Shared numerical helpers: stable softmax / log-sum-exp, KL divergence,
//! and summary statistics.

use crate::error::{Error, Result};

/// log(Σ exp(x_i)) with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx.is_infinite() {
        return mx;
    }
    let sum: f64 = xs.iter().map(|&x| (x - mx).exp()).sum();
    mx + sum.ln()
}

/// Softmax with max subtraction; safe for arguments as large as the δ = 100
/// attention biases used by the transformer construction.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(xs: &mut [f64]) {
    debug_assert!(!xs.is_empty());
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - mx).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Floor applied to the second KL argument before renormalization, so that a
/// saturated (one-hot) estimate yields a large but finite divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// KL(p ‖ r) in nats, with `0·log 0 = 0` and `r` floored at [`KL_FLOOR`] then
/// renormalized. Errors on length mismatch.
pub fn kl_divergence(p: &[f64], r: &[f64]) -> Result<f64> {
    if p.len() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "kl_divergence: p has length {}, r has length {}",
            p.len(),
            r.len()
        )));
    }
    let floored: Vec<f64> = r.iter().map(|&x| x.max(KL_FLOOR)).collect();
    let z: f64 = floored.iter().sum();
    let mut kl = 0.0;
    for (&pi, &ri) in p.iter().zip(&floored) {
        if pi > 0.0 {
            kl += pi * (pi / (ri / z)).ln();
        }
    }
    Ok(kl)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_arguments() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one_under_large_biases() {
        let p = softmax(&[100.0, -100.0, 100.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-80);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.3, 0.2, 0.5];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_handles_zero_mass_in_p() {
        // KL((1,0) ‖ (0.5,0.5)) = log 2.
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_is_asymmetric() {
        // Frozen from a 20-digit evaluation of the defining sum.
        let p = [0.9, 0.1];
        let r = [0.5, 0.5];
        let forward = kl_divergence(&p, &r).unwrap();
        let backward = kl_divergence(&r, &p).unwrap();
        assert!((forward - 0.368_064_207_168_497_1).abs() < 1e-4);
        assert!((backward - 0.510_825_623_765_990_7).abs() < 1e-4);
        assert!((forward - backward).abs() > 0.1);
    }

    #[test]
    fn kl_rejects_length_mismatch() {
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_floors_the_second_argument() {
        let kl = kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(kl.is_finite());
        assert!(kl > 0.0);
    }
}
