//! Posterior-mean machinery for the mixture weights.
//!
//! The Dirichlet prior is not conjugate to the mixture likelihood, but the
//! posterior is an explicit finite mixture of Dirichlets indexed by latent
//! lag-assignment paths. Small instances are solved exactly by enumerating
//! the paths; general instances use a Gibbs sampler that alternates between
//! the latent lags and the weights.

use crate::error::{Error, Result};
use crate::model::{
    lag_transition_probs, predictive_distribution, DirichletPrior, MixtureWeights, TokenSequence,
    TransitionMatrix,
};
use crate::rng::Rng;
use statrs::function::gamma::ln_gamma;

/// Guard on the latent-path enumeration: `m^(T-m)` must not exceed this.
pub const ENUMERATION_BOUND: f64 = 1e7;

/// A latent lag-assignment path, one lag in `[1, m]` per observed step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentPath {
    lags: Vec<usize>,
}

impl LatentPath {
    pub fn new(lags: Vec<usize>, m: usize) -> Result<Self> {
        if let Some(&bad) = lags.iter().find(|&&g| g < 1 || g > m) {
            return Err(Error::InvalidConfig(format!("lag {bad} outside [1, {m}]")));
        }
        Ok(LatentPath { lags })
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    /// Per-lag usage counts `k_g`.
    pub fn counts(&self, m: usize) -> Vec<usize> {
        let mut k = vec![0usize; m];
        for &g in &self.lags {
            k[g - 1] += 1;
        }
        k
    }
}

/// Posterior mean together with the expected lag-usage counts.
///
/// For exact enumeration `standard_error` is zero and `num_samples` counts
/// the enumerated paths; for Gibbs it is the plain i.i.d. standard error of
/// the post-burn-in draws (autocorrelation is ignored, so treat it as a
/// lower bound).
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub mean: MixtureWeights,
    pub expected_counts: Vec<f64>,
    pub num_samples: usize,
    pub standard_error: Vec<f64>,
}

/// Exact posterior mean by enumerating every latent path.
///
/// The posterior is `Σ_z π(z)·Dir(α + k(z))` with
/// `π(z) ∝ P(y|z)·B(α + k(z))`, so the mean is
/// `Σ_z π(z)·(α + k(z)) / (α₀ + T - m)`. Path weights are accumulated in log
/// space with running rescaling.
///
/// Errors when `m^(T-m)` exceeds [`ENUMERATION_BOUND`].
pub fn exact_posterior_mean(
    pi: &TransitionMatrix,
    prior: &DirichletPrior,
    seq: &TokenSequence,
) -> Result<PosteriorSummary> {
    let m = prior.m();
    let alpha = prior.alpha();
    let alpha0 = prior.alpha0();
    let n = seq.len().saturating_sub(m);

    if n == 0 {
        // No observed transitions: the posterior is the prior.
        let mean: Vec<f64> = alpha.iter().map(|&a| a / alpha0).collect();
        return Ok(PosteriorSummary {
            mean: MixtureWeights::from_unnormalized(mean)?,
            expected_counts: vec![0.0; m],
            num_samples: 1,
            standard_error: vec![0.0; m],
        });
    }

    let paths = (m as f64).powi(n as i32);
    if paths > ENUMERATION_BOUND {
        return Err(Error::EnumerationTooLarge {
            paths,
            bound: ENUMERATION_BOUND,
        });
    }

    let logc = lag_transition_probs(pi, seq, m).mapv(f64::ln);
    // ln Γ(α_g + c) for every reachable count c; the path weight needs
    // ln B(α + k(z)) and everything constant across paths cancels.
    let lgamma_table: Vec<Vec<f64>> = (0..m)
        .map(|g| (0..=n).map(|c| ln_gamma(alpha[g] + c as f64)).collect())
        .collect();

    struct Acc {
        shift: f64,
        total: f64,
        counts_acc: Vec<f64>,
    }
    let mut acc = Acc {
        shift: f64::NEG_INFINITY,
        total: 0.0,
        counts_acc: vec![0.0; m],
    };

    struct PathScan<'a> {
        n: usize,
        m: usize,
        logc: &'a ndarray::Array2<f64>,
        lgamma_table: &'a [Vec<f64>],
    }

    impl PathScan<'_> {
        fn descend(&self, depth: usize, logp: f64, counts: &mut [usize], acc: &mut Acc) {
            if depth == self.n {
                let mut logw = logp;
                for (table, &c) in self.lgamma_table.iter().zip(counts.iter()) {
                    logw += table[c];
                }
                if logw > acc.shift {
                    let rescale = (acc.shift - logw).exp();
                    acc.total *= rescale;
                    for c in acc.counts_acc.iter_mut() {
                        *c *= rescale;
                    }
                    acc.shift = logw;
                }
                let w = (logw - acc.shift).exp();
                acc.total += w;
                for (accum, &c) in acc.counts_acc.iter_mut().zip(counts.iter()) {
                    *accum += w * c as f64;
                }
                return;
            }
            for g in 0..self.m {
                counts[g] += 1;
                self.descend(depth + 1, logp + self.logc[[depth, g]], counts, acc);
                counts[g] -= 1;
            }
        }
    }

    let scan = PathScan {
        n,
        m,
        logc: &logc,
        lgamma_table: &lgamma_table,
    };
    let mut counts = vec![0usize; m];
    scan.descend(0, 0.0, &mut counts, &mut acc);

    let expected_counts: Vec<f64> = acc.counts_acc.iter().map(|&c| c / acc.total).collect();
    let mean: Vec<f64> = expected_counts
        .iter()
        .zip(alpha)
        .map(|(&k, &a)| (a + k) / (alpha0 + n as f64))
        .collect();
    Ok(PosteriorSummary {
        mean: MixtureWeights::from_unnormalized(mean)?,
        expected_counts,
        num_samples: paths as usize,
        standard_error: vec![0.0; m],
    })
}

/// Materialization guard for [`latent_path_posterior`]; far below the
/// enumeration bound because every path is kept in memory.
pub const PATH_LIST_BOUND: f64 = 1e5;

/// The full posterior over latent lag paths, `π(z) ∝ P(y|z)·B(α + k(z))`,
/// normalized in log space. Diagnostic companion to
/// [`exact_posterior_mean`], which never materializes the paths.
pub fn latent_path_posterior(
    pi: &TransitionMatrix,
    prior: &DirichletPrior,
    seq: &TokenSequence,
) -> Result<Vec<(LatentPath, f64)>> {
    let m = prior.m();
    let alpha = prior.alpha();
    let n = seq.len().saturating_sub(m);
    if n == 0 {
        return Ok(vec![(LatentPath::new(Vec::new(), m)?, 1.0)]);
    }
    let paths = (m as f64).powi(n as i32);
    if paths > PATH_LIST_BOUND {
        return Err(Error::EnumerationTooLarge {
            paths,
            bound: PATH_LIST_BOUND,
        });
    }
    let logc = lag_transition_probs(pi, seq, m).mapv(f64::ln);
    let lgamma_table: Vec<Vec<f64>> = (0..m)
        .map(|g| (0..=n).map(|c| ln_gamma(alpha[g] + c as f64)).collect())
        .collect();

    let count = paths as usize;
    let mut lags = vec![1usize; n];
    let mut out = Vec::with_capacity(count);
    let mut logw_all = Vec::with_capacity(count);
    for _ in 0..count {
        let mut logw = 0.0;
        let mut k = vec![0usize; m];
        for (step, &g) in lags.iter().enumerate() {
            logw += logc[[step, g - 1]];
            k[g - 1] += 1;
        }
        for g in 0..m {
            logw += lgamma_table[g][k[g]];
        }
        logw_all.push(logw);
        out.push(LatentPath::new(lags.clone(), m)?);
        // Odometer increment over {1..m}^n.
        for slot in lags.iter_mut() {
            if *slot < m {
                *slot += 1;
                break;
            }
            *slot = 1;
        }
    }
    let norm = crate::numeric::log_sum_exp(&logw_all);
    Ok(out
        .into_iter()
        .zip(logw_all)
        .map(|(path, lw)| (path, (lw - norm).exp()))
        .collect())
}

/// Post-burn-in λ draws from the Gibbs sampler that alternates
///   1. `Z_s ~ Categorical(λ_g π(y_{s-g}, y_s) / Σ_h λ_h π(y_{s-h}, y_s))`,
///   2. `λ ~ Dirichlet(α + lag counts of Z)`.
///
/// The chain starts from the uniform λ.
pub fn gibbs_samples(
    pi: &TransitionMatrix,
    prior: &DirichletPrior,
    seq: &TokenSequence,
    burn_in: usize,
    num_samples: usize,
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    assert!(num_samples >= 1);
    let m = prior.m();
    let alpha = prior.alpha();
    let n = seq.len().saturating_sub(m);
    let c = if n > 0 {
        Some(lag_transition_probs(pi, seq, m))
    } else {
        None
    };

    let mut lambda = MixtureWeights::uniform(m).as_slice().to_vec();
    let mut weights = vec![0.0; m];
    let mut samples = Vec::with_capacity(num_samples);
    for iter in 0..burn_in + num_samples {
        let mut lag_counts = vec![0usize; m];
        if let Some(c) = &c {
            for s in 0..n {
                for g in 0..m {
                    weights[g] = lambda[g] * c[[s, g]];
                }
                lag_counts[rng.categorical(&weights)] += 1;
            }
        }
        let mut sum = 0.0;
        for ((l, &a), &n_g) in lambda.iter_mut().zip(alpha).zip(&lag_counts) {
            *l = rng.gamma(a + n_g as f64);
            sum += *l;
        }
        for l in lambda.iter_mut() {
            *l /= sum;
        }
        if iter >= burn_in {
            samples.push(lambda.clone());
        }
    }
    samples
}

/// Gibbs approximation of the posterior mean. The standard error is the
/// i.i.d. formula `s/√K` on the post-burn-in draws.
pub fn gibbs_posterior_mean(
    pi: &TransitionMatrix,
    prior: &DirichletPrior,
    seq: &TokenSequence,
    burn_in: usize,
    num_samples: usize,
    rng: &mut Rng,
) -> PosteriorSummary {
    let m = prior.m();
    let n = seq.len().saturating_sub(m);
    let samples = gibbs_samples(pi, prior, seq, burn_in, num_samples, rng);
    let k = samples.len() as f64;
    let mut mean = vec![0.0; m];
    for s in &samples {
        for (acc, &x) in mean.iter_mut().zip(s) {
            *acc += x;
        }
    }
    for x in mean.iter_mut() {
        *x /= k;
    }
    let mut se = vec![0.0; m];
    if samples.len() > 1 {
        for s in &samples {
            for (acc, (&x, &mu)) in se.iter_mut().zip(s.iter().zip(&mean)) {
                *acc += (x - mu) * (x - mu);
            }
        }
        for x in se.iter_mut() {
            *x = (*x / (k - 1.0) / k).sqrt();
        }
    }
    // E[k_g] implied by the add-constant structure of the posterior mean.
    let alpha0 = prior.alpha0();
    let expected_counts: Vec<f64> = mean
        .iter()
        .zip(prior.alpha())
        .map(|(&mu, &a)| mu * (alpha0 + n as f64) - a)
        .collect();
    PosteriorSummary {
        mean: MixtureWeights::from_unnormalized(mean).expect("positive draws"),
        expected_counts,
        num_samples: samples.len(),
        standard_error: se,
    }
}

/// Predictive distribution under a posterior-mean point estimate; the Bayes
/// predictive is linear in λ, so plugging in the mean is exact.
pub fn bayes_predictive(
    pi: &TransitionMatrix,
    mean: &MixtureWeights,
    context: &TokenSequence,
) -> Result<Vec<f64>> {
    predictive_distribution(pi, mean, context)
}
