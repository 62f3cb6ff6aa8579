//! Domain types and the MTD model itself: sampling, predictive distribution,
//! likelihood, gradient, and posterior lag responsibilities.
//!
//! Tokens are 1-based integers in `[1, q]`, matching the model's convention
//! that `π(i, j)` is the probability of moving from token `i` to token `j`.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Positivity floor applied to sampled transition matrices. Keeps every
/// mixture denominator (and every `log π` entry) finite.
pub const C_MIN: f64 = 1e-6;

/// Tolerance for simplex / row-stochasticity validation.
const SUM_TOL: f64 = 1e-12;

/// Alphabet size `q`, MTD order `m`, and sequence length `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub q: usize,
    pub m: usize,
    pub t: usize,
}

impl ModelConfig {
    pub fn new(q: usize, m: usize, t: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidConfig(format!("q must be >= 2, got {q}")));
        }
        if m < 1 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if t <= m {
            return Err(Error::InvalidConfig(format!(
                "T must exceed m, got T = {t}, m = {m}"
            )));
        }
        Ok(ModelConfig { q, m, t })
    }

    /// Number of observed transitions, `T - m`.
    pub fn num_steps(&self) -> usize {
        self.t - self.m
    }
}

/// Row-stochastic `q × q` transition matrix with every entry at least
/// [`C_MIN`] (up to a renormalization ulp).
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    entries: Array2<f64>,
}

impl TransitionMatrix {
    /// Validates row sums and the positivity floor.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let q = entries.nrows();
        if q < 2 || entries.ncols() != q {
            return Err(Error::InvalidConfig(format!(
                "transition matrix must be square with q >= 2, got {} x {}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for (i, row) in entries.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&x| x < C_MIN * (1.0 - 1e-9)) {
                return Err(Error::InvalidConfig(format!(
                    "row {i} has an entry below the positivity floor {C_MIN}"
                )));
            }
        }
        Ok(TransitionMatrix { entries })
    }

    /// Floors entries at [`C_MIN`] and renormalizes each row. Floored entries
    /// are pinned exactly to the floor while the rest absorb the deficit, so
    /// the result satisfies both invariants simultaneously.
    pub fn floored(mut raw: Array2<f64>) -> Result<Self> {
        let q = raw.nrows();
        if q < 2 || raw.ncols() != q {
            return Err(Error::InvalidConfig(format!(
                "transition matrix must be square with q >= 2, got {} x {}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if 1.0 - q as f64 * C_MIN <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "q = {q} too large for floor {C_MIN}"
            )));
        }
        for mut row in raw.rows_mut() {
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig(
                    "transition rows must be finite and nonnegative".into(),
                ));
            }
            let mut pinned = vec![false; q];
            loop {
                let mut free_sum = 0.0;
                let mut pinned_count = 0usize;
                for (j, &p) in pinned.iter().enumerate() {
                    if p {
                        pinned_count += 1;
                    } else {
                        free_sum += row[j];
                    }
                }
                let budget = 1.0 - pinned_count as f64 * C_MIN;
                let scale = if free_sum > 0.0 {
                    budget / free_sum
                } else {
                    0.0
                };
                let mut changed = false;
                for j in 0..q {
                    if pinned[j] {
                        continue;
                    }
                    let v = if free_sum > 0.0 { row[j] * scale } else { 0.0 };
                    if v < C_MIN {
                        pinned[j] = true;
                        changed = true;
                    }
                }
                if !changed {
                    for j in 0..q {
                        row[j] = if pinned[j] { C_MIN } else { row[j] * scale };
                    }
                    break;
                }
            }
            let sum: f64 = row.sum();
            for j in 0..q {
                row[j] /= sum;
            }
        }
        TransitionMatrix::new(raw)
    }

    /// Rows drawn independently from `Dirichlet(1, …, 1)`, then floored.
    pub fn sample(q: usize, rng: &mut Rng) -> Result<Self> {
        let mut raw = Array2::zeros((q, q));
        for mut row in raw.rows_mut() {
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = rng.gamma(1.0);
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        TransitionMatrix::floored(raw)
    }

    /// All entries `1/q`.
    pub fn uniform(q: usize) -> Self {
        TransitionMatrix {
            entries: Array2::from_elem((q, q), 1.0 / q as f64),
        }
    }

    pub fn q(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Transition probability for 1-based tokens.
    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.entries[[from - 1, to - 1]]
    }

    /// Row for a 1-based token.
    pub fn row(&self, from: usize) -> ArrayView1<'_, f64> {
        self.entries.row(from - 1)
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A point on the simplex `Δ_{m-1}`: nonnegative, sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    weights: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("mixture weights".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidConfig(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        Ok(MixtureWeights { weights })
    }

    /// Renormalizes a nonnegative weight vector onto the simplex.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("mixture weights".into()));
        }
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig(
                "weights must be nonnegative with positive sum".into(),
            ));
        }
        for w in weights.iter_mut() {
            *w /= sum;
        }
        Ok(MixtureWeights { weights })
    }

    pub fn uniform(m: usize) -> Self {
        MixtureWeights {
            weights: vec![1.0 / m as f64; m.max(1)],
        }
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of 1-based lag `g`.
    #[inline]
    pub fn lag(&self, g: usize) -> f64 {
        self.weights[g - 1]
    }

    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }
}

/// Dirichlet concentration parameters, all positive.
#[derive(Debug, Clone)]
pub struct DirichletPrior {
    alpha: Vec<f64>,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::EmptyInput("dirichlet alpha".into()));
        }
        if alpha.iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(Error::InvalidConfig(
                "dirichlet alpha must be strictly positive".into(),
            ));
        }
        Ok(DirichletPrior { alpha })
    }

    /// `α = (1, …, 1)`, the prior used throughout the experiments.
    pub fn flat(m: usize) -> Self {
        DirichletPrior {
            alpha: vec![1.0; m.max(1)],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }
}

/// An observed trajectory of 1-based tokens in `[1, q]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<usize>,
    q: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidConfig(format!("q must be >= 2, got {q}")));
        }
        if let Some(&bad) = tokens.iter().find(|&&y| y < 1 || y > q) {
            return Err(Error::InvalidConfig(format!(
                "token {bad} outside the alphabet [1, {q}]"
            )));
        }
        Ok(TokenSequence { tokens, q })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// 1-based position access.
    #[inline]
    pub fn at(&self, t: usize) -> usize {
        self.tokens[t - 1]
    }

    /// First `n` tokens as a new sequence.
    pub fn prefix(&self, n: usize) -> TokenSequence {
        TokenSequence {
            tokens: self.tokens[..n].to_vec(),
            q: self.q,
        }
    }
}

/// Posterior lag responsibilities `γ_t(g)` for `t ∈ {m+1..T}`, `g ∈ {1..m}`.
/// Each row is a distribution over lags.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    gamma: Array2<f64>,
    m: usize,
}

impl Responsibilities {
    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_steps(&self) -> usize {
        self.gamma.nrows()
    }

    /// Row for 1-based time index `t ∈ {m+1..T}`.
    pub fn row_for(&self, t: usize) -> ArrayView1<'_, f64> {
        self.gamma.row(t - self.m - 1)
    }

    /// Column sums `Σ_t γ_t(g)`, the sufficient statistic of the one-step
    /// mirror-descent estimator.
    pub fn lag_sums(&self) -> Vec<f64> {
        (0..self.m).map(|g| self.gamma.column(g).sum()).collect()
    }
}

/// Dirichlet(α) draw by gamma-variate normalization.
pub fn sample_mixture_weights(prior: &DirichletPrior, rng: &mut Rng) -> MixtureWeights {
    if prior.m() == 1 {
        return MixtureWeights::uniform(1);
    }
    let raw: Vec<f64> = prior.alpha().iter().map(|&a| rng.gamma(a)).collect();
    MixtureWeights::from_unnormalized(raw).expect("gamma draws are positive")
}

/// Rows from `Dirichlet(1, …, 1)`, floored at [`C_MIN`] and renormalized.
pub fn sample_transition_matrix(q: usize, rng: &mut Rng) -> Result<TransitionMatrix> {
    TransitionMatrix::sample(q, rng)
}

/// Draws a length-`T` trajectory: the first `m` tokens i.i.d. uniform over
/// the alphabet, each later token from `Σ_g λ_g π(y_{t-g}, ·)`.
pub fn generate_sequence(
    cfg: &ModelConfig,
    pi: &TransitionMatrix,
    lambda: &MixtureWeights,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    if lambda.m() != cfg.m {
        return Err(Error::DimensionMismatch(format!(
            "lambda has {} lags, config says m = {}",
            lambda.m(),
            cfg.m
        )));
    }
    if pi.q() != cfg.q {
        return Err(Error::DimensionMismatch(format!(
            "pi is {} x {}, config says q = {}",
            pi.q(),
            pi.q(),
            cfg.q
        )));
    }
    let mut tokens = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.m {
        tokens.push(1 + rng.uniform_int(cfg.q));
    }
    let mut probs = vec![0.0; cfg.q];
    for t in cfg.m + 1..=cfg.t {
        probs.iter_mut().for_each(|p| *p = 0.0);
        for g in 1..=cfg.m {
            let from = tokens[t - g - 1];
            let lam = lambda.lag(g);
            for (p, &pi_entry) in probs.iter_mut().zip(pi.row(from)) {
                *p += lam * pi_entry;
            }
        }
        tokens.push(1 + rng.categorical(&probs));
    }
    TokenSequence::new(tokens, cfg.q)
}

/// Distribution of the next token after `context`:
/// `Σ_g λ_g π(y_{L+1-g}, ·)` where `L` is the context length and lag 1 is the
/// final context token.
pub fn predictive_distribution(
    pi: &TransitionMatrix,
    lambda: &MixtureWeights,
    context: &TokenSequence,
) -> Result<Vec<f64>> {
    let m = lambda.m();
    let len = context.len();
    if len < m {
        return Err(Error::ContextTooShort {
            needed: m,
            got: len,
        });
    }
    let mut probs = vec![0.0; pi.q()];
    for g in 1..=m {
        let from = context.at(len + 1 - g);
        let lam = lambda.lag(g);
        for (p, &pi_entry) in probs.iter_mut().zip(pi.row(from)) {
            *p += lam * pi_entry;
        }
    }
    Ok(probs)
}

/// The matrix `c[t, g] = π(y_{t-g}, y_t)` for `t ∈ {m+1..T}`, shared by the
/// likelihood, its derivatives, and all the estimators.
pub fn lag_transition_probs(pi: &TransitionMatrix, seq: &TokenSequence, m: usize) -> Array2<f64> {
    let t_len = seq.len();
    assert!(t_len > m, "sequence must be longer than the order m");
    let n = t_len - m;
    let mut c = Array2::zeros((n, m));
    for (row, t) in (m + 1..=t_len).enumerate() {
        let to = seq.at(t);
        for g in 1..=m {
            c[[row, g - 1]] = pi.prob(seq.at(t - g), to);
        }
    }
    c
}

/// `ℓ(w) = Σ_t log(Σ_g w_g c_{t,g})` for an arbitrary positive weight vector.
/// Exposed unnormalized so finite-difference checks can step off the simplex.
pub fn log_likelihood_at(pi: &TransitionMatrix, weights: &[f64], seq: &TokenSequence) -> f64 {
    let c = lag_transition_probs(pi, seq, weights.len());
    c.rows()
        .into_iter()
        .map(|row| row.dot(&ndarray::ArrayView1::from(weights)).ln())
        .sum()
}

/// Conditional log-likelihood `Σ_{t=m+1}^T log Σ_g λ_g π(y_{t-g}, y_t)`.
/// Finite because transition entries are floored.
pub fn log_likelihood(pi: &TransitionMatrix, lambda: &MixtureWeights, seq: &TokenSequence) -> f64 {
    log_likelihood_at(pi, lambda.as_slice(), seq)
}

/// Gradient of [`log_likelihood_at`]: component `g` is
/// `Σ_t c_{t,g} / (Σ_h w_h c_{t,h})`.
pub fn log_likelihood_gradient_at(
    pi: &TransitionMatrix,
    weights: &[f64],
    seq: &TokenSequence,
) -> Vec<f64> {
    let m = weights.len();
    let c = lag_transition_probs(pi, seq, m);
    let mut grad = vec![0.0; m];
    for row in c.rows() {
        let denom: f64 = row.dot(&ndarray::ArrayView1::from(weights));
        let inv = 1.0 / denom;
        for (gr, &cv) in grad.iter_mut().zip(row) {
            *gr += cv * inv;
        }
    }
    grad
}

pub fn log_likelihood_gradient(
    pi: &TransitionMatrix,
    lambda: &MixtureWeights,
    seq: &TokenSequence,
) -> Vec<f64> {
    log_likelihood_gradient_at(pi, lambda.as_slice(), seq)
}

/// E-step responsibilities `γ_t(g) = λ_g c_{t,g} / Σ_h λ_h c_{t,h}`.
pub fn responsibilities(
    pi: &TransitionMatrix,
    lambda: &MixtureWeights,
    seq: &TokenSequence,
) -> Responsibilities {
    let m = lambda.m();
    let mut gamma = lag_transition_probs(pi, seq, m);
    for mut row in gamma.rows_mut() {
        let mut denom = 0.0;
        for (x, &lam) in row.iter_mut().zip(lambda.as_slice()) {
            *x *= lam;
            denom += *x;
        }
        for x in row.iter_mut() {
            *x /= denom;
        }
    }
    Responsibilities { gamma, m }
}
