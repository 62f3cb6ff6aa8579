//! Point estimators for the mixture weights from a single sequence: one-step
//! mirror descent (exponentiated gradient), multi-step EG, EM, an
//! entropy-regularized variant, and learning-rate selection.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{
    lag_transition_probs, MixtureWeights, ModelConfig, TokenSequence, TransitionMatrix,
};
use crate::numeric::{kl_divergence, softmax};

/// Positive step size for the multiplicative updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate(f64);

impl LearningRate {
    pub fn new(eta: f64) -> Result<Self> {
        if eta <= 0.0 || !eta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {eta}"
            )));
        }
        Ok(LearningRate(eta))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Iteration history of an estimator run. `loglik[i]` is the log-likelihood
/// of `iterates[i]`; EM traces are nondecreasing in it.
#[derive(Debug, Clone)]
pub struct EstimatorTrace {
    pub iterates: Vec<MixtureWeights>,
    pub loglik: Vec<f64>,
    pub converged: bool,
}

/// `η = 1/(m+1)`, the rate at which the one-step estimator agrees with the
/// linearized posterior mean to first order.
pub fn default_eta(m: usize) -> LearningRate {
    LearningRate(1.0 / (m as f64 + 1.0))
}

/// `η = 1/((T-m)·m²)`, the reciprocal of the relative-smoothness bound at the
/// uniform mixture; guarantees stable EG steps.
pub fn safe_eta(cfg: &ModelConfig) -> LearningRate {
    LearningRate(1.0 / (cfg.num_steps() as f64 * (cfg.m * cfg.m) as f64))
}

/// log-likelihood evaluated from a precomputed lag-probability matrix.
fn loglik_on(c: &Array2<f64>, weights: &[f64]) -> f64 {
    c.rows()
        .into_iter()
        .map(|row| row.dot(&ndarray::ArrayView1::from(weights)).ln())
        .sum()
}

/// Gradient of the log-likelihood from a precomputed lag-probability matrix.
fn gradient_on(c: &Array2<f64>, weights: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; weights.len()];
    for row in c.rows() {
        let denom: f64 = row.dot(&ndarray::ArrayView1::from(weights));
        let inv = 1.0 / denom;
        for (g, &cv) in grad.iter_mut().zip(row) {
            *g += cv * inv;
        }
    }
    grad
}

/// One multiplicative update given precomputed gradient scores
/// `score_g = η·∇_g`: `λ'_g ∝ λ_g · exp(score_g - max score)`.
///
/// The max is taken over the support of λ: components at exactly zero stay
/// zero whatever their score, and a one-hot λ is a fixed point instead of
/// underflowing the normalizer when another component's score dominates.
fn eg_update(lambda: &[f64], scores: &[f64]) -> Vec<f64> {
    let mx = lambda
        .iter()
        .zip(scores)
        .filter(|(&l, _)| l > 0.0)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = lambda
        .iter()
        .zip(scores)
        .map(|(&l, &s)| if l > 0.0 { l * (s - mx).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x /= sum;
    }
    out
}

/// Exponentiated-gradient ascent step on the log-likelihood:
/// `λ'_g = λ_g exp(η ∇ℓ(λ)_g) / Σ_h λ_h exp(η ∇ℓ(λ)_h)`.
pub fn eg_step(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    lambda: &MixtureWeights,
    eta: LearningRate,
) -> MixtureWeights {
    let c = lag_transition_probs(pi, seq, lambda.m());
    let grad = gradient_on(&c, lambda.as_slice());
    let scores: Vec<f64> = grad.iter().map(|&g| eta.value() * g).collect();
    MixtureWeights::new(eg_update(lambda.as_slice(), &scores))
        .expect("EG update stays on the simplex")
}

/// Softmax form of the one-step estimator given the summed uniform-prior
/// responsibilities: `λ̂_g ∝ exp(η · m · Σ_t γ_t(g))`.
pub fn one_step_md_from_lag_sums(lag_sums: &[f64], eta: LearningRate) -> MixtureWeights {
    let m = lag_sums.len() as f64;
    let scores: Vec<f64> = lag_sums.iter().map(|&s| eta.value() * m * s).collect();
    MixtureWeights::new(softmax(&scores)).expect("softmax output is a distribution")
}

/// Uniform-prior responsibility sums `Σ_{t=m+1}^T γ_t(g)` with
/// `γ_t(g) = π(y_{t-g}, y_t) / Σ_h π(y_{t-h}, y_t)`.
pub fn uniform_lag_sums(pi: &TransitionMatrix, seq: &TokenSequence, m: usize) -> Vec<f64> {
    let c = lag_transition_probs(pi, seq, m);
    let mut sums = vec![0.0; m];
    for row in c.rows() {
        let denom: f64 = row.sum();
        for (s, &cv) in sums.iter_mut().zip(row) {
            *s += cv / denom;
        }
    }
    sums
}

/// One-step mirror-descent estimator: a single EG update from the uniform
/// initialization, in closed softmax form.
pub fn one_step_md(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    m: usize,
    eta: LearningRate,
) -> MixtureWeights {
    one_step_md_from_lag_sums(&uniform_lag_sums(pi, seq, m), eta)
}

/// `k` EG steps from the uniform initialization, with the trace recorded.
pub fn eg_multi_step(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    m: usize,
    eta: LearningRate,
    k: usize,
) -> (MixtureWeights, EstimatorTrace) {
    assert!(k >= 1, "at least one step required");
    let c = lag_transition_probs(pi, seq, m);
    let mut lambda = MixtureWeights::uniform(m).as_slice().to_vec();
    let mut iterates = vec![MixtureWeights::uniform(m)];
    let mut loglik = vec![loglik_on(&c, &lambda)];
    for _ in 0..k {
        let grad = gradient_on(&c, &lambda);
        let scores: Vec<f64> = grad.iter().map(|&g| eta.value() * g).collect();
        lambda = eg_update(&lambda, &scores);
        iterates.push(MixtureWeights::new(lambda.clone()).expect("simplex"));
        loglik.push(loglik_on(&c, &lambda));
    }
    let last = iterates.last().unwrap().clone();
    (
        last,
        EstimatorTrace {
            iterates,
            loglik,
            converged: true,
        },
    )
}

/// EM for the mixture weights: E-step responsibilities under the current λ,
/// M-step `λ_g ← Σ_t γ_t(g) / (T-m)`, stopping when the log-likelihood gain
/// drops below `tol` or after `max_iter` iterations (flagged in the trace).
pub fn em_fit(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    lambda0: &MixtureWeights,
    tol: f64,
    max_iter: usize,
) -> (MixtureWeights, EstimatorTrace) {
    assert!(tol > 0.0);
    let m = lambda0.m();
    let c = lag_transition_probs(pi, seq, m);
    let n = c.nrows() as f64;
    let mut lambda = lambda0.as_slice().to_vec();
    let mut iterates = vec![lambda0.clone()];
    let mut loglik = vec![loglik_on(&c, &lambda)];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut next = vec![0.0; m];
        for row in c.rows() {
            let mut denom = 0.0;
            for (&cv, &l) in row.iter().zip(&lambda) {
                denom += cv * l;
            }
            let inv = 1.0 / denom;
            for ((nx, &cv), &l) in next.iter_mut().zip(row).zip(&lambda) {
                *nx += l * cv * inv;
            }
        }
        for x in next.iter_mut() {
            *x /= n;
        }
        lambda = next;
        let ll = loglik_on(&c, &lambda);
        let gain = ll - *loglik.last().unwrap();
        iterates.push(MixtureWeights::new(lambda.clone()).expect("simplex"));
        loglik.push(ll);
        if gain.abs() < tol {
            converged = true;
            break;
        }
    }
    let last = iterates.last().unwrap().clone();
    (
        last,
        EstimatorTrace {
            iterates,
            loglik,
            converged,
        },
    )
}

/// Minimizes `-ℓ(λ) + γ·Ψ(λ)` with `Ψ(λ) = Σ_g λ_g log λ_g` by EG iteration
/// on the regularized gradient `∇ℓ_g - γ(1 + log λ_g)`.
///
/// The effective step size is `1/(1/η + γ)`: the entropy term is 1-smooth
/// relative to its own geometry, so its strength adds to the likelihood's
/// smoothness constant. With `η = safe_eta` this keeps the iteration stable
/// for arbitrarily large `γ`.
pub fn entropy_regularized_estimate(
    pi: &TransitionMatrix,
    seq: &TokenSequence,
    m: usize,
    gamma_reg: f64,
    eta: LearningRate,
    max_iter: usize,
    tol: f64,
) -> (MixtureWeights, EstimatorTrace) {
    assert!(gamma_reg >= 0.0);
    let c = lag_transition_probs(pi, seq, m);
    let step = 1.0 / (1.0 / eta.value() + gamma_reg);
    let mut lambda = MixtureWeights::uniform(m).as_slice().to_vec();
    let mut iterates = vec![MixtureWeights::uniform(m)];
    let mut loglik = vec![loglik_on(&c, &lambda)];
    let mut converged = false;
    for _ in 0..max_iter {
        let grad = gradient_on(&c, &lambda);
        let scores: Vec<f64> = grad
            .iter()
            .zip(&lambda)
            .map(|(&g, &l)| step * (g - gamma_reg * (1.0 + l.ln())))
            .collect();
        let next = eg_update(&lambda, &scores);
        let delta = next
            .iter()
            .zip(&lambda)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    iterates.push(MixtureWeights::new(lambda.clone()).expect("simplex"));
    loglik.push(loglik_on(&c, &lambda));
    let last = iterates.last().unwrap().clone();
    (
        last,
        EstimatorTrace {
            iterates,
            loglik,
            converged,
        },
    )
}

/// A log-spaced learning-rate grid, inclusive of both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl EtaGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if min <= 0.0 || !min.is_finite() || max < min || !max.is_finite() || points == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must satisfy 0 < min <= max and points >= 1, got [{min}, {max}] x {points}"
            )));
        }
        Ok(EtaGrid { min, max, points })
    }

    /// The tuning grid used for the estimator comparisons:
    /// 1000 log-spaced points on [1e-5, 1e-1].
    pub fn standard() -> Self {
        EtaGrid {
            min: 1e-5,
            max: 1e-1,
            points: 1000,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (ln_min, ln_max) = (self.min.ln(), self.max.ln());
        (0..self.points)
            .map(|i| {
                let frac = i as f64 / (self.points - 1) as f64;
                (ln_min + frac * (ln_max - ln_min)).exp()
            })
            .collect()
    }
}

/// Selects the grid η minimizing the mean KL from the true predictive to the
/// `steps`-step MD estimator's predictive over the given sequences (each
/// paired with its true mixture weights). Ties break toward the smallest η.
pub fn grid_search_eta(
    pi: &TransitionMatrix,
    sequences: &[(TokenSequence, MixtureWeights)],
    steps: usize,
    grid: &EtaGrid,
) -> Result<LearningRate> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("grid search sequence set".into()));
    }
    assert!(steps >= 1);
    let m = sequences[0].1.m();

    struct Prepared {
        c: Array2<f64>,
        lag_sums: Vec<f64>,
        truth: Vec<f64>,
        ctx_rows: Vec<usize>,
    }
    let prepared: Vec<Prepared> = sequences
        .iter()
        .map(|(seq, lambda_true)| {
            let c = lag_transition_probs(pi, seq, m);
            let mut lag_sums = vec![0.0; m];
            for row in c.rows() {
                let denom: f64 = row.sum();
                for (s, &cv) in lag_sums.iter_mut().zip(row) {
                    *s += cv / denom;
                }
            }
            let truth = crate::model::predictive_distribution(pi, lambda_true, seq)?;
            let len = seq.len();
            let ctx_rows = (1..=m).map(|g| seq.at(len + 1 - g)).collect();
            Ok(Prepared {
                c,
                lag_sums,
                truth,
                ctx_rows,
            })
        })
        .collect::<Result<_>>()?;

    let q = pi.q();
    let mut best: Option<(f64, f64)> = None; // (mean KL, eta)
    let mut pred = vec![0.0; q];
    for eta in grid.values() {
        let rate = LearningRate::new(eta)?;
        let mut total = 0.0;
        for p in &prepared {
            let lambda = if steps == 1 {
                one_step_md_from_lag_sums(&p.lag_sums, rate)
            } else {
                let mut lam = MixtureWeights::uniform(m).as_slice().to_vec();
                for _ in 0..steps {
                    let grad = gradient_on(&p.c, &lam);
                    let scores: Vec<f64> = grad.iter().map(|&g| eta * g).collect();
                    lam = eg_update(&lam, &scores);
                }
                MixtureWeights::new(lam).expect("simplex")
            };
            pred.iter_mut().for_each(|x| *x = 0.0);
            for (g, &from) in p.ctx_rows.iter().enumerate() {
                let w = lambda.as_slice()[g];
                for (x, &pe) in pred.iter_mut().zip(pi.row(from)) {
                    *x += w * pe;
                }
            }
            total += kl_divergence(&p.truth, &pred)?;
        }
        let mean = total / prepared.len() as f64;
        if best.is_none_or(|(bk, _)| mean < bk) {
            best = Some((mean, eta));
        }
    }
    let (_, eta) = best.expect("grid is non-empty");
    LearningRate::new(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_sequence, log_likelihood, sample_mixture_weights, DirichletPrior};
    use crate::rng::Rng;
    use ndarray::array;

    fn demo_pi() -> TransitionMatrix {
        TransitionMatrix::new(array![[0.9, 0.1], [0.2, 0.8]]).unwrap()
    }

    fn random_instance(
        seed: u64,
        q: usize,
        m: usize,
        t: usize,
    ) -> (TransitionMatrix, TokenSequence) {
        let mut rng = Rng::new(seed);
        let pi = TransitionMatrix::sample(q, &mut rng.child(0)).unwrap();
        let cfg = ModelConfig::new(q, m, t).unwrap();
        let lambda = sample_mixture_weights(&DirichletPrior::flat(m), &mut rng);
        let seq = generate_sequence(&cfg, &pi, &lambda, &mut rng).unwrap();
        (pi, seq)
    }

    #[test]
    fn eta_formulas() {
        assert!((default_eta(2).value() - 1.0 / 3.0).abs() < 1e-15);
        assert!((default_eta(1).value() - 0.5).abs() < 1e-15);
        assert!((default_eta(4).value() - 0.2).abs() < 1e-15);
        let cfg = ModelConfig::new(5, 4, 68).unwrap();
        assert!((safe_eta(&cfg).value() - 1.0 / 1024.0).abs() < 1e-18);
        let tight = ModelConfig::new(5, 3, 4).unwrap();
        assert!((safe_eta(&tight).value() - 1.0 / 9.0).abs() < 1e-15);
        let half = ModelConfig::new(5, 4, 132).unwrap();
        assert!((safe_eta(&half).value() - safe_eta(&cfg).value() / 2.0).abs() < 1e-18);
    }

    #[test]
    fn eg_step_vanishing_eta_is_identity() {
        let (pi, seq) = random_instance(21, 3, 3, 40);
        let lambda = MixtureWeights::new(vec![0.5, 0.3, 0.2]).unwrap();
        let out = eg_step(&pi, &seq, &lambda, LearningRate::new(1e-15).unwrap());
        for (a, b) in out.as_slice().iter().zip(lambda.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eg_step_uniform_transition_is_identity() {
        // All gradient components equal; the multiplicative update is shift
        // invariant, so λ is a fixed point.
        let pi = TransitionMatrix::uniform(3);
        let cfg = ModelConfig::new(3, 2, 30).unwrap();
        let mut rng = Rng::new(22);
        let lambda = MixtureWeights::new(vec![0.7, 0.3]).unwrap();
        let seq = generate_sequence(&cfg, &pi, &lambda, &mut rng).unwrap();
        let out = eg_step(&pi, &seq, &lambda, LearningRate::new(0.5).unwrap());
        for (a, b) in out.as_slice().iter().zip(lambda.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn eg_step_from_uniform_matches_one_step_md() {
        let (pi, seq) = random_instance(23, 4, 3, 64);
        let eta = LearningRate::new(1.0 / 4.0).unwrap();
        let via_eg = eg_step(&pi, &seq, &MixtureWeights::uniform(3), eta);
        let via_md = one_step_md(&pi, &seq, 3, eta);
        for (a, b) in via_eg.as_slice().iter().zip(via_md.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_uniform_transition_is_uniform() {
        let pi = TransitionMatrix::uniform(4);
        let cfg = ModelConfig::new(4, 3, 50).unwrap();
        let mut rng = Rng::new(24);
        let seq = generate_sequence(&cfg, &pi, &MixtureWeights::uniform(3), &mut rng).unwrap();
        for eta in [1e-3, 0.25, 10.0] {
            let out = one_step_md(&pi, &seq, 3, LearningRate::new(eta).unwrap());
            for &x in out.as_slice() {
                assert!((x - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_saturates_at_huge_eta() {
        let (pi, seq) = random_instance(25, 3, 3, 60);
        let sums = uniform_lag_sums(&pi, &seq, 3);
        let argmax = sums
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let out = one_step_md(&pi, &seq, 3, LearningRate::new(1e6).unwrap());
        assert!((out.as_slice()[argmax] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_step_matches_high_precision_oracle() {
        // Frozen from a 50-digit evaluation of the softmax-of-summed-
        // responsibilities formula on this exact sequence.
        let pi = demo_pi();
        let seq = TokenSequence::new(vec![1, 2, 2, 1, 1, 2, 1, 1], 2).unwrap();
        let sums = uniform_lag_sums(&pi, &seq, 2);
        assert!((sums[0] - 3.707_070_707_070_707).abs() < 1e-12);
        assert!((sums[1] - 2.292_929_292_929_293).abs() < 1e-12);
        let out = one_step_md(&pi, &seq, 2, LearningRate::new(1.0 / 3.0).unwrap());
        assert!((out.as_slice()[0] - 0.719_657_017_475_232_7).abs() < 1e-12);
        assert!((out.as_slice()[1] - 0.280_342_982_524_767_3).abs() < 1e-12);
    }

    #[test]
    fn multi_step_k1_equals_one_step() {
        let (pi, seq) = random_instance(26, 5, 4, 64);
        let eta = default_eta(4);
        let (multi, trace) = eg_multi_step(&pi, &seq, 4, eta, 1);
        let single = one_step_md(&pi, &seq, 4, eta);
        assert_eq!(trace.iterates.len(), 2);
        for (a, b) in multi.as_slice().iter().zip(single.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_step_uniform_transition_stays_uniform() {
        let pi = TransitionMatrix::uniform(3);
        let cfg = ModelConfig::new(3, 2, 40).unwrap();
        let mut rng = Rng::new(27);
        let seq = generate_sequence(&cfg, &pi, &MixtureWeights::uniform(2), &mut rng).unwrap();
        let (out, _) = eg_multi_step(&pi, &seq, 2, LearningRate::new(0.3).unwrap(), 7);
        for &x in out.as_slice() {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn safe_eta_traces_are_monotone() {
        for trial in 0..100 {
            let q = 2 + (trial as usize % 4);
            let m = 1 + (trial as usize % 4);
            let t = m + 16 + 3 * (trial as usize % 30);
            let (pi, seq) = random_instance(1000 + trial, q, m, t);
            let cfg = ModelConfig::new(q, m, t).unwrap();
            let (_, trace) = eg_multi_step(&pi, &seq, m, safe_eta(&cfg), 50);
            for w in trace.loglik.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-10,
                    "trial {trial}: log-likelihood dropped from {} to {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn em_single_lag_is_immediate() {
        let (pi, seq) = random_instance(28, 3, 1, 30);
        let (out, trace) = em_fit(&pi, &seq, &MixtureWeights::uniform(1), 1e-10, 100);
        assert_eq!(out.as_slice(), &[1.0]);
        assert!(trace.converged);
        assert!(trace.iterates.len() <= 3);
    }

    #[test]
    fn em_uniform_transition_converges_immediately() {
        let pi = TransitionMatrix::uniform(3);
        let cfg = ModelConfig::new(3, 2, 40).unwrap();
        let mut rng = Rng::new(29);
        let seq = generate_sequence(&cfg, &pi, &MixtureWeights::uniform(2), &mut rng).unwrap();
        let (out, trace) = em_fit(&pi, &seq, &MixtureWeights::uniform(2), 1e-10, 100);
        assert!(trace.converged);
        for &x in out.as_slice() {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn em_matches_grid_search_mle() {
        // Independent maximum-likelihood oracle: 2000-point grid over Δ₁.
        let (pi, seq) = random_instance(30, 2, 2, 24);
        let (em, trace) = em_fit(&pi, &seq, &MixtureWeights::uniform(2), 1e-10, 10_000);
        assert!(trace.converged);
        let mut best = (f64::NEG_INFINITY, 0.0);
        let grid_points = 2000;
        for i in 0..grid_points {
            let l1 = i as f64 / (grid_points - 1) as f64;
            let ll = crate::model::log_likelihood_at(&pi, &[l1, 1.0 - l1], &seq);
            if ll > best.0 {
                best = (ll, l1);
            }
        }
        assert!(
            (em.as_slice()[0] - best.1).abs() < 5e-4,
            "EM {} vs grid {}",
            em.as_slice()[0],
            best.1
        );
    }

    #[test]
    fn em_traces_are_monotone() {
        for trial in 0..50 {
            let q = 2 + (trial as usize % 3);
            let m = 2 + (trial as usize % 3);
            let (pi, seq) = random_instance(3000 + trial, q, m, m + 40);
            let (_, trace) = em_fit(&pi, &seq, &MixtureWeights::uniform(m), 1e-10, 500);
            for w in trace.loglik.windows(2) {
                assert!(w[1] >= w[0] - 1e-10);
            }
        }
    }

    #[test]
    fn entropy_reg_zero_gamma_matches_em() {
        let (pi, seq) = random_instance(31, 2, 2, 24);
        let cfg = ModelConfig::new(2, 2, 24).unwrap();
        let (em, _) = em_fit(&pi, &seq, &MixtureWeights::uniform(2), 1e-12, 20_000);
        let (reg, trace) =
            entropy_regularized_estimate(&pi, &seq, 2, 0.0, safe_eta(&cfg), 400_000, 1e-12);
        assert!(trace.converged);
        for (a, b) in reg.as_slice().iter().zip(em.as_slice()) {
            assert!((a - b).abs() < 1e-4, "reg {a} vs em {b}");
        }
    }

    #[test]
    fn entropy_reg_large_gamma_is_uniform() {
        let (pi, seq) = random_instance(32, 3, 3, 50);
        let cfg = ModelConfig::new(3, 3, 50).unwrap();
        let (reg, _) =
            entropy_regularized_estimate(&pi, &seq, 3, 1e6, safe_eta(&cfg), 100_000, 1e-12);
        for &x in reg.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn grid_values_are_log_spaced_and_inclusive() {
        let grid = EtaGrid::standard();
        let vals = grid.values();
        assert_eq!(vals.len(), 1000);
        assert!((vals[0] - 1e-5).abs() < 1e-18);
        assert!((vals[999] - 1e-1).abs() < 1e-12);
        let ratio0 = vals[1] / vals[0];
        let ratio_mid = vals[501] / vals[500];
        assert!((ratio0 - ratio_mid).abs() < 1e-10);
    }

    #[test]
    fn grid_search_degenerate_grid_returns_the_point() {
        let (pi, seq) = random_instance(33, 3, 2, 40);
        let lambda = MixtureWeights::new(vec![0.6, 0.4]).unwrap();
        let grid = EtaGrid::new(0.05, 0.05, 1).unwrap();
        let eta = grid_search_eta(&pi, &[(seq, lambda)], 1, &grid).unwrap();
        assert_eq!(eta.value(), 0.05);
    }

    #[test]
    fn grid_search_uniform_transition_ties_break_small() {
        let pi = TransitionMatrix::uniform(3);
        let cfg = ModelConfig::new(3, 2, 40).unwrap();
        let mut rng = Rng::new(34);
        let lambda = sample_mixture_weights(&DirichletPrior::flat(2), &mut rng);
        let seq = generate_sequence(&cfg, &pi, &lambda, &mut rng).unwrap();
        let grid = EtaGrid::new(1e-4, 1e-1, 50).unwrap();
        let eta = grid_search_eta(&pi, &[(seq, lambda)], 1, &grid).unwrap();
        assert!((eta.value() - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn grid_search_rejects_empty_sequences() {
        let pi = demo_pi();
        assert!(grid_search_eta(&pi, &[], 1, &EtaGrid::standard()).is_err());
    }

    #[test]
    fn lag_permutation_equivariance() {
        // Permuting the responsibility sums permutes the softmax output the
        // same way.
        let sums = vec![3.2, 1.1, 2.7, 0.4];
        let eta = LearningRate::new(0.2).unwrap();
        let base = one_step_md_from_lag_sums(&sums, eta);
        let perm = [2usize, 0, 3, 1];
        let permuted_sums: Vec<f64> = perm.iter().map(|&i| sums[i]).collect();
        let permuted = one_step_md_from_lag_sums(&permuted_sums, eta);
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted.as_slice()[k] - base.as_slice()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn estimators_stay_on_the_simplex() {
        for trial in 0..30 {
            let q = 2 + (trial as usize % 4);
            let m = 2 + (trial as usize % 4);
            let t = m + 20 + (trial as usize % 40);
            let (pi, seq) = random_instance(5000 + trial, q, m, t);
            let cfg = ModelConfig::new(q, m, t).unwrap();
            let outputs = [
                one_step_md(&pi, &seq, m, default_eta(m)),
                eg_multi_step(&pi, &seq, m, safe_eta(&cfg), 5).0,
                em_fit(&pi, &seq, &MixtureWeights::uniform(m), 1e-10, 200).0,
                entropy_regularized_estimate(&pi, &seq, m, 3.0, safe_eta(&cfg), 5_000, 1e-10).0,
            ];
            for out in outputs {
                let sum: f64 = out.as_slice().iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(out.as_slice().iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn saturated_one_hot_iterates_stay_on_the_simplex() {
        // At the top of the tuning grid the update saturates to a vertex in
        // one step; later steps must treat that vertex as the fixed point it
        // is rather than underflow the normalizer.
        let one_hot = MixtureWeights::new(vec![0.0, 1.0, 0.0]).unwrap();
        let (pi, seq) = random_instance(36, 4, 3, 600);
        let next = eg_step(&pi, &seq, &one_hot, LearningRate::new(0.1).unwrap());
        assert_eq!(next.as_slice(), one_hot.as_slice());
        let (out, trace) = eg_multi_step(&pi, &seq, 3, LearningRate::new(0.1).unwrap(), 6);
        assert!(out.as_slice().iter().all(|x| x.is_finite()));
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(trace.loglik.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn em_loglik_matches_model_loglik() {
        let (pi, seq) = random_instance(35, 3, 2, 50);
        let lambda0 = MixtureWeights::new(vec![0.3, 0.7]).unwrap();
        let (_, trace) = em_fit(&pi, &seq, &lambda0, 1e-10, 50);
        let direct = log_likelihood(&pi, &lambda0, &seq);
        assert!((trace.loglik[0] - direct).abs() < 1e-12);
    }
}
