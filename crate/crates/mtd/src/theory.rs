//! Executable checks of the analytic results: first-order equivalence of the
//! one-step mirror-descent estimator and the linearized posterior mean,
//! Hessian and relative-smoothness bounds, and score scaling in the sequence
//! length.

use ndarray::Array2;

use crate::model::{
    generate_sequence, lag_transition_probs, log_likelihood_gradient, MixtureWeights, ModelConfig,
    TokenSequence, TransitionMatrix,
};
use crate::numeric::softmax;
use crate::rng::Rng;

/// Jacobian of `softmax(η·g)` at `g = 0`: `(η/m)(I - (1/m)·11ᵀ)`.
///
/// Entries are arranged so each row sums to exactly zero in floating point.
pub fn md_jacobian_at_zero(m: usize, eta: f64) -> Array2<f64> {
    let off = -eta / (m * m) as f64;
    let diag = -((m - 1) as f64) * off;
    Array2::from_shape_fn((m, m), |(k, j)| if k == j { diag } else { off })
}

/// Jacobian of the linearized posterior mean at `g = 0`: the covariance of
/// the flat Dirichlet prior, entries `(m·δ_kj - 1)/(m²(m+1))`.
pub fn bayes_linearized_jacobian(m: usize) -> Array2<f64> {
    let off = -1.0 / ((m * m * (m + 1)) as f64);
    let diag = -((m - 1) as f64) * off;
    Array2::from_shape_fn((m, m), |(k, j)| if k == j { diag } else { off })
}

/// Side-by-side Jacobians at the equivalence rate `η = 1/(m+1)`.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub md_jacobian: Array2<f64>,
    pub bayes_jacobian: Array2<f64>,
    pub max_abs_diff: f64,
}

pub fn jacobian_report(m: usize) -> JacobianReport {
    let md = md_jacobian_at_zero(m, 1.0 / (m as f64 + 1.0));
    let bayes = bayes_linearized_jacobian(m);
    let max_abs_diff = md
        .iter()
        .zip(bayes.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    JacobianReport {
        md_jacobian: md,
        bayes_jacobian: bayes,
        max_abs_diff,
    }
}

/// Hessian of the loss `f(λ) = -ℓ(λ)`: `Σ_t c_t c_tᵀ / (λ·c_t)²`.
pub fn hessian_loss(
    pi: &TransitionMatrix,
    lambda: &MixtureWeights,
    seq: &TokenSequence,
) -> Array2<f64> {
    let m = lambda.m();
    let c = lag_transition_probs(pi, seq, m);
    let mut h = Array2::zeros((m, m));
    for row in c.rows() {
        let s: f64 = row.dot(&ndarray::ArrayView1::from(lambda.as_slice()));
        let inv2 = 1.0 / (s * s);
        for k in 0..m {
            for j in 0..m {
                h[[k, j]] += row[k] * row[j] * inv2;
            }
        }
    }
    h
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration with a deterministic start vector.
pub fn operator_norm(h: &Array2<f64>, max_iters: usize, tol: f64) -> f64 {
    let n = h.nrows();
    assert_eq!(n, h.ncols());
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let norm = |x: &[f64]| x.iter().map(|&a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let mut w = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += h[[k, j]] * v[j];
            }
            w[k] = acc;
        }
        let rayleigh: f64 = v.iter().zip(&w).map(|(&a, &b)| a * b).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        if (rayleigh - estimate).abs() <= tol * rayleigh.abs().max(1.0) {
            return rayleigh;
        }
        estimate = rayleigh;
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
    }
    estimate
}

/// Smallest eigenvalue via a shifted power iteration: `λ_min(H) = c - λ_max(cI - H)`.
pub fn min_eigenvalue(h: &Array2<f64>, max_iters: usize, tol: f64) -> f64 {
    let c = operator_norm(h, max_iters, tol);
    let n = h.nrows();
    let shifted = Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { c } else { 0.0 };
        id - h[[i, j]]
    });
    c - operator_norm(&shifted, max_iters, tol)
}

/// Operator norm of the Hessian at the uniform mixture against the bound
/// `(T-m)·m²`, plus the coarser whole-simplex bound `(T-m)·m/c_min²` with
/// `c_min` the smallest observed lag probability.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessReport {
    pub opnorm_at_uniform: f64,
    pub bound: f64,
    pub holds: bool,
    pub global_bound: f64,
    pub global_holds: bool,
}

pub fn check_smoothness_bound(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    m: usize,
) -> SmoothnessReport {
    let uniform = MixtureWeights::uniform(m);
    let h = hessian_loss(pi, &uniform, seq);
    let opnorm = operator_norm(&h, 200, 1e-10);
    let n = (seq.len() - m) as f64;
    let bound = n * (m * m) as f64;
    let c = lag_transition_probs(pi, seq, m);
    let c_min = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let global_bound = n * m as f64 / (c_min * c_min);
    SmoothnessReport {
        opnorm_at_uniform: opnorm,
        bound,
        holds: opnorm <= bound * (1.0 + 1e-12),
        global_bound,
        global_holds: opnorm <= global_bound * (1.0 + 1e-12),
    }
}

/// Per-component linear fit of the mean score at the uniform mixture against
/// the number of observed transitions.
#[derive(Debug, Clone)]
pub struct ScoreScalingReport {
    pub t_values: Vec<usize>,
    /// `mean_scores[i][g]`: trial-averaged gradient component `g` at `T = t_values[i]`.
    pub mean_scores: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub r_squared: Vec<f64>,
}

/// Averages `∇ℓ(uniform)` over `trials` fresh sequences at each `T` and fits
/// each gradient component linearly in `T - m`.
pub fn check_score_scaling(
    pi: &TransitionMatrix,
    lambda_true: &MixtureWeights,
    t_values: &[usize],
    trials: usize,
    rng: &Rng,
) -> ScoreScalingReport {
    let m = lambda_true.m();
    let uniform = MixtureWeights::uniform(m);
    let mut mean_scores = Vec::with_capacity(t_values.len());
    for (ti, &t) in t_values.iter().enumerate() {
        assert!(t > m);
        let cfg = ModelConfig::new(pi.q(), m, t).expect("valid config");
        let mut acc = vec![0.0; m];
        for trial in 0..trials {
            let mut r = rng.child((ti * trials + trial) as u64);
            let seq = generate_sequence(&cfg, pi, lambda_true, &mut r).expect("valid instance");
            let grad = log_likelihood_gradient(pi, &uniform, &seq);
            for (a, g) in acc.iter_mut().zip(grad) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|a| *a /= trials as f64);
        mean_scores.push(acc);
    }

    let xs: Vec<f64> = t_values.iter().map(|&t| (t - m) as f64).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|&x| (x - x_mean).powi(2)).sum();
    let mut slopes = vec![0.0; m];
    let mut intercepts = vec![0.0; m];
    let mut r_squared = vec![0.0; m];
    for g in 0..m {
        let ys: Vec<f64> = mean_scores.iter().map(|row| row[g]).collect();
        let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| (x - x_mean) * (y - y_mean))
            .sum();
        let slope = sxy / sxx;
        let intercept = y_mean - slope * x_mean;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &y)| (y - intercept - slope * x).powi(2))
            .sum();
        let ss_tot: f64 = ys.iter().map(|&y| (y - y_mean).powi(2)).sum();
        slopes[g] = slope;
        intercepts[g] = intercept;
        r_squared[g] = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        };
    }
    ScoreScalingReport {
        t_values: t_values.to_vec(),
        mean_scores,
        slopes,
        intercepts,
        r_squared,
    }
}

/// Exact uniform draw from the simplex `Δ_{m-1}` by normalized exponential
/// spacings.
pub fn simplex_uniform_sample(m: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m)
        .map(|_| -rng.uniform().max(f64::MIN_POSITIVE).ln())
        .collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Monte-Carlo finite-difference Jacobian of the simplex integral
/// `∫ λ·exp(⟨g,λ⟩) dμ / ∫ exp(⟨g,λ⟩) dμ` at `g = 0`.
///
/// Central differences in each coordinate with common random numbers; the
/// samples are split into `chunks` batches and the returned standard error is
/// across batch estimates. Independent of the closed-form route in
/// [`bayes_linearized_jacobian`].
pub fn mc_bayes_jacobian(
    m: usize,
    samples: usize,
    fd_step: f64,
    chunks: usize,
    rng: &Rng,
) -> (Array2<f64>, Array2<f64>) {
    assert!(chunks >= 2 && samples >= chunks);
    let per_chunk = samples / chunks;
    let mut batch_jacobians: Vec<Array2<f64>> = Vec::with_capacity(chunks);
    for chunk in 0..chunks {
        let mut r = rng.child(chunk as u64);
        // Accumulators per perturbed coordinate j and sign: Z and N_k.
        let mut z_plus = vec![0.0; m];
        let mut z_minus = vec![0.0; m];
        let mut n_plus = Array2::<f64>::zeros((m, m)); // [j][k]
        let mut n_minus = Array2::<f64>::zeros((m, m));
        for _ in 0..per_chunk {
            let lam = simplex_uniform_sample(m, &mut r);
            for j in 0..m {
                let ep = (fd_step * lam[j]).exp();
                let em = (-fd_step * lam[j]).exp();
                z_plus[j] += ep;
                z_minus[j] += em;
                for k in 0..m {
                    n_plus[[j, k]] += ep * lam[k];
                    n_minus[[j, k]] += em * lam[k];
                }
            }
        }
        let mut jac = Array2::<f64>::zeros((m, m));
        for j in 0..m {
            for k in 0..m {
                let plus = n_plus[[j, k]] / z_plus[j];
                let minus = n_minus[[j, k]] / z_minus[j];
                jac[[k, j]] = (plus - minus) / (2.0 * fd_step);
            }
        }
        batch_jacobians.push(jac);
    }
    let mut mean = Array2::<f64>::zeros((m, m));
    for jac in &batch_jacobians {
        mean += jac;
    }
    mean /= chunks as f64;
    let mut se = Array2::<f64>::zeros((m, m));
    for jac in &batch_jacobians {
        for k in 0..m {
            for j in 0..m {
                se[[k, j]] += (jac[[k, j]] - mean[[k, j]]).powi(2);
            }
        }
    }
    se.mapv_inplace(|x| (x / (chunks as f64 - 1.0) / chunks as f64).sqrt());
    (mean, se)
}

/// `‖softmax(s·u/(m+1)) - (uniform + Cov·s·u)‖₂` for each scale `s`: the
/// remainder of the shared first-order expansion along direction `u`.
pub fn first_order_remainders(m: usize, direction: &[f64], scales: &[f64]) -> Vec<f64> {
    assert_eq!(direction.len(), m);
    let eta = 1.0 / (m as f64 + 1.0);
    let cov = bayes_linearized_jacobian(m);
    scales
        .iter()
        .map(|&s| {
            let g: Vec<f64> = direction.iter().map(|&u| s * u).collect();
            let scores: Vec<f64> = g.iter().map(|&x| eta * x).collect();
            let sm = softmax(&scores);
            let mut sq = 0.0;
            for k in 0..m {
                let lin: f64 = 1.0 / m as f64 + (0..m).map(|j| cov[[k, j]] * g[j]).sum::<f64>();
                sq += (sm[k] - lin).powi(2);
            }
            sq.sqrt()
        })
        .collect()
}
