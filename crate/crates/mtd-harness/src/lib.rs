//! Experiment harness: KL sweeps across sequence lengths and estimators,
//! learning-rate resolution (fixed / grid / closed-form), CSV emission, and
//! the plain-text config format used by the CLI.
//!
//! A sweep fixes one transition matrix from the master seed. For every
//! sequence length `T` it draws `num_sequences` fresh mixture weights, each
//! with its own child stream keyed by `(master, T index, sequence index)`,
//! generates a length-`T` trajectory, and hands the estimators the first
//! `T-1` tokens. Reported is `KL(true predictive ‖ estimator predictive)`
//! for the next token after that context, aggregated per `(T, estimator)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use mtd::bayes::{exact_posterior_mean, gibbs_posterior_mean, ENUMERATION_BOUND};
use mtd::construction::{beta_for_eta, construct_weights, ForwardOutput};
use mtd::error::Error;
use mtd::estimators::{
    default_eta, eg_multi_step, em_fit, entropy_regularized_estimate, grid_search_eta, one_step_md,
    safe_eta, EtaGrid, LearningRate,
};
use mtd::model::{generate_sequence, predictive_distribution, sample_mixture_weights};
pub use mtd::numeric::kl_divergence;
use mtd::numeric::mean_and_stderr;
use mtd::{
    DirichletPrior, MixtureWeights, ModelConfig, Result, Rng, TokenSequence, TransitionMatrix,
};

/// Convergence settings for the EM reference fits inside sweeps.
pub const EM_TOL: f64 = 1e-10;
pub const EM_MAX_ITER: usize = 10_000;

/// Which estimator a sweep cell evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSel {
    /// `k`-step mirror descent (`md-1` is the one-step estimator).
    Md(usize),
    Em,
    Gibbs,
    Exact,
    Constructed,
    Regularized,
}

impl fmt::Display for EstimatorSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSel::Md(k) => write!(f, "md-{k}"),
            EstimatorSel::Em => write!(f, "em"),
            EstimatorSel::Gibbs => write!(f, "gibbs"),
            EstimatorSel::Exact => write!(f, "exact"),
            EstimatorSel::Constructed => write!(f, "constructed"),
            EstimatorSel::Regularized => write!(f, "regularized"),
        }
    }
}

impl FromStr for EstimatorSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(EstimatorSel::Em),
            "gibbs" => Ok(EstimatorSel::Gibbs),
            "exact" => Ok(EstimatorSel::Exact),
            "constructed" => Ok(EstimatorSel::Constructed),
            "regularized" => Ok(EstimatorSel::Regularized),
            _ => {
                if let Some(steps) = s.strip_prefix("md-") {
                    let k: usize = steps.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad estimator '{s}': md-<steps> expected"))
                    })?;
                    if k == 0 {
                        return Err(Error::InvalidConfig("md steps must be >= 1".into()));
                    }
                    Ok(EstimatorSel::Md(k))
                } else {
                    Err(Error::InvalidConfig(format!("unknown estimator '{s}'")))
                }
            }
        }
    }
}

/// How the learning rate of the mirror-descent family is chosen per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaPolicy {
    Fixed(f64),
    Grid(EtaGrid),
    /// `1/(m+1)`.
    DefaultEta,
    /// `1/((T-m)·m²)` for the context length at hand.
    SafeEta,
}

/// Full description of a sweep.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub q: usize,
    pub m: usize,
    pub seq_lengths: Vec<usize>,
    pub num_sequences: usize,
    pub estimators: Vec<EstimatorSel>,
    pub master_seed: u64,
    pub eta_policy: EtaPolicy,
    pub delta: [f64; 3],
    /// Overrides the construction's β; otherwise derived from the η policy.
    pub beta: Option<f64>,
    pub gamma_reg: f64,
    pub burn_in: usize,
    pub num_samples: usize,
    /// Fixed transition matrix; when absent one is sampled from the master
    /// seed's first child stream.
    pub pi_override: Option<TransitionMatrix>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seq_lengths.is_empty() {
            return Err(Error::EmptyInput("seq_lengths".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::EmptyInput("estimators".into()));
        }
        if self.num_sequences == 0 {
            return Err(Error::InvalidConfig("num_sequences must be >= 1".into()));
        }
        for &t in &self.seq_lengths {
            // Estimators see the length T-1 context, which must itself
            // contain at least one observed transition.
            if t < self.m + 2 {
                return Err(Error::InvalidConfig(format!(
                    "sequence length {t} too short for order m = {} (need T >= m + 2)",
                    self.m
                )));
            }
        }
        ModelConfig::new(self.q, self.m, *self.seq_lengths.iter().max().unwrap())?;
        Ok(())
    }
}

/// Aggregated outcome of one `(T, estimator)` cell.
#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Done {
        kl_mean: f64,
        kl_stderr: f64,
        eta: f64,
        wall_ms: u64,
    },
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub t: usize,
    pub estimator: String,
    pub outcome: RowOutcome,
}

/// Zeroes the wall-time field so that emitted CSV bytes depend only on the
/// spec and the master seed.
pub fn clear_wall_times(rows: &mut [ResultRow]) {
    for row in rows {
        if let RowOutcome::Done { wall_ms, .. } = &mut row.outcome {
            *wall_ms = 0;
        }
    }
}

struct Instance {
    context: TokenSequence,
    lambda: MixtureWeights,
    truth: Vec<f64>,
}

fn resolve_eta(
    spec: &ExperimentSpec,
    ctx_cfg: &ModelConfig,
    pi: &TransitionMatrix,
    instances: &[Instance],
    steps: usize,
) -> Result<LearningRate> {
    match spec.eta_policy {
        EtaPolicy::Fixed(v) => LearningRate::new(v),
        EtaPolicy::DefaultEta => Ok(default_eta(spec.m)),
        EtaPolicy::SafeEta => Ok(safe_eta(ctx_cfg)),
        EtaPolicy::Grid(grid) => {
            let pairs: Vec<(TokenSequence, MixtureWeights)> = instances
                .iter()
                .map(|inst| (inst.context.clone(), inst.lambda.clone()))
                .collect();
            grid_search_eta(pi, &pairs, steps, &grid)
        }
    }
}

/// Runs the sweep. Cells whose estimator is guarded out (exact enumeration
/// too large) produce an explicit skipped row, never a silent omission.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let root = Rng::new(spec.master_seed);
    let pi = match &spec.pi_override {
        Some(pi) => pi.clone(),
        None => TransitionMatrix::sample(spec.q, &mut root.child(0))?,
    };
    let prior = DirichletPrior::flat(spec.m);
    let mut rows = Vec::new();

    for (ti, &t) in spec.seq_lengths.iter().enumerate() {
        let full_cfg = ModelConfig::new(spec.q, spec.m, t)?;
        let ctx_cfg = ModelConfig::new(spec.q, spec.m, t - 1)?;
        let t_rng = root.child(1 + ti as u64);

        let instances: Vec<Instance> = (0..spec.num_sequences)
            .map(|i| {
                let mut r = t_rng.child(i as u64);
                let lambda = sample_mixture_weights(&prior, &mut r);
                let full = generate_sequence(&full_cfg, &pi, &lambda, &mut r)?;
                let context = full.prefix(t - 1);
                let truth = predictive_distribution(&pi, &lambda, &context)?;
                Ok(Instance {
                    context,
                    lambda,
                    truth,
                })
            })
            .collect::<Result<_>>()?;

        for (ei, &est) in spec.estimators.iter().enumerate() {
            let start = Instant::now();
            if est == EstimatorSel::Exact {
                let paths = (spec.m as f64).powi((t - 1 - spec.m) as i32);
                if paths > ENUMERATION_BOUND {
                    rows.push(ResultRow {
                        t,
                        estimator: est.to_string(),
                        outcome: RowOutcome::Skipped {
                            reason: format!(
                                "enumeration too large: m^(T-1-m) = {paths:.3e} exceeds {ENUMERATION_BOUND:.1e}"
                            ),
                        },
                    });
                    continue;
                }
            }

            // Per-cell stream namespace, independent of generation.
            let cell_rng = t_rng.child(1_000_000 + ei as u64);
            let (eta_used, kls) =
                evaluate_cell(spec, &ctx_cfg, &pi, &prior, &instances, est, cell_rng)?;
            let (kl_mean, kl_stderr) = mean_and_stderr(&kls);
            rows.push(ResultRow {
                t,
                estimator: est.to_string(),
                outcome: RowOutcome::Done {
                    kl_mean,
                    kl_stderr,
                    eta: eta_used,
                    wall_ms: start.elapsed().as_millis() as u64,
                },
            });
        }
    }
    Ok(rows)
}

fn evaluate_cell(
    spec: &ExperimentSpec,
    ctx_cfg: &ModelConfig,
    pi: &TransitionMatrix,
    prior: &DirichletPrior,
    instances: &[Instance],
    est: EstimatorSel,
    cell_rng: Rng,
) -> Result<(f64, Vec<f64>)> {
    let m = spec.m;
    let kl_of = |lambda: &MixtureWeights, inst: &Instance| -> Result<f64> {
        let pred = predictive_distribution(pi, lambda, &inst.context)?;
        kl_divergence(&inst.truth, &pred)
    };

    match est {
        EstimatorSel::Md(k) => {
            let eta = resolve_eta(spec, ctx_cfg, pi, instances, k)?;
            let kls: Vec<f64> = instances
                .par_iter()
                .map(|inst| {
                    let lambda = if k == 1 {
                        one_step_md(pi, &inst.context, m, eta)
                    } else {
                        eg_multi_step(pi, &inst.context, m, eta, k).0
                    };
                    kl_of(&lambda, inst)
                })
                .collect::<Result<_>>()?;
            Ok((eta.value(), kls))
        }
        EstimatorSel::Constructed => {
            let eta = match spec.beta {
                Some(beta) => LearningRate::new(beta / (m as f64 * ctx_cfg.num_steps() as f64))?,
                None => resolve_eta(spec, ctx_cfg, pi, instances, 1)?,
            };
            let beta = beta_for_eta(eta, ctx_cfg);
            let net = construct_weights(pi, ctx_cfg, spec.delta, beta)?;
            let kls: Vec<f64> = instances
                .par_iter()
                .map(|inst| {
                    let out = net.forward(&inst.context)?;
                    kl_divergence(&inst.truth, &out.prediction)
                })
                .collect::<Result<_>>()?;
            Ok((eta.value(), kls))
        }
        EstimatorSel::Em => {
            let kls: Vec<f64> = instances
                .par_iter()
                .map(|inst| {
                    let (lambda, _) = em_fit(
                        pi,
                        &inst.context,
                        &MixtureWeights::uniform(m),
                        EM_TOL,
                        EM_MAX_ITER,
                    );
                    kl_of(&lambda, inst)
                })
                .collect::<Result<_>>()?;
            Ok((0.0, kls))
        }
        EstimatorSel::Gibbs => {
            let kls: Vec<f64> = instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut chain_rng = cell_rng.child(i as u64);
                    let post = gibbs_posterior_mean(
                        pi,
                        prior,
                        &inst.context,
                        spec.burn_in,
                        spec.num_samples,
                        &mut chain_rng,
                    );
                    kl_of(&post.mean, inst)
                })
                .collect::<Result<_>>()?;
            Ok((0.0, kls))
        }
        EstimatorSel::Exact => {
            let kls: Vec<f64> = instances
                .par_iter()
                .map(|inst| {
                    let post = exact_posterior_mean(pi, prior, &inst.context)?;
                    kl_of(&post.mean, inst)
                })
                .collect::<Result<_>>()?;
            Ok((0.0, kls))
        }
        EstimatorSel::Regularized => {
            let eta = safe_eta(ctx_cfg);
            let kls: Vec<f64> = instances
                .par_iter()
                .map(|inst| {
                    let (lambda, _) = entropy_regularized_estimate(
                        pi,
                        &inst.context,
                        m,
                        spec.gamma_reg,
                        eta,
                        200_000,
                        1e-10,
                    );
                    kl_of(&lambda, inst)
                })
                .collect::<Result<_>>()?;
            Ok((0.0, kls))
        }
    }
}

fn format_float(x: f64) -> String {
    format!("{x:.9e}")
}

/// Renders rows in the sweep CSV schema
/// `T,estimator,kl_mean,kl_stderr,eta,wall_ms`, floats with 10 significant
/// digits, newline-terminated. Skipped cells carry a `skipped` marker in the
/// numeric columns.
pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut out = String::from("T,estimator,kl_mean,kl_stderr,eta,wall_ms\n");
    for row in rows {
        match &row.outcome {
            RowOutcome::Done {
                kl_mean,
                kl_stderr,
                eta,
                wall_ms,
            } => {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.t,
                    row.estimator,
                    format_float(*kl_mean),
                    format_float(*kl_stderr),
                    format_float(*eta),
                    wall_ms
                ));
            }
            RowOutcome::Skipped { .. } => {
                out.push_str(&format!(
                    "{},{},skipped,skipped,skipped,0\n",
                    row.t, row.estimator
                ));
            }
        }
    }
    out
}

/// Writes [`csv_string`] to a file.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(rows)).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses the sweep CSV schema back into rows. Skip markers come back as
/// [`RowOutcome::Skipped`] with an empty reason (the byte format does not
/// carry it).
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("csv text".into()))?;
    if header != "T,estimator,kl_mean,kl_stderr,eta,wall_ms" {
        return Err(Error::InvalidConfig(format!(
            "unexpected header '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected 6 fields, got {}",
                no + 2,
                fields.len()
            )));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("line {}: bad T", no + 2)))?;
        let outcome = if fields[2] == "skipped" {
            RowOutcome::Skipped {
                reason: String::new(),
            }
        } else {
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::InvalidConfig(format!("line {}: bad {what}", no + 2)))
            };
            RowOutcome::Done {
                kl_mean: parse(fields[2], "kl_mean")?,
                kl_stderr: parse(fields[3], "kl_stderr")?,
                eta: parse(fields[4], "eta")?,
                wall_ms: fields[5]
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("line {}: bad wall_ms", no + 2)))?,
            }
        };
        rows.push(ResultRow {
            t,
            estimator: fields[1].to_string(),
            outcome,
        });
    }
    Ok(rows)
}

/// Attention maps in long format: `layer,row,col,value` with 1-based layer
/// and position indices, heads flattened in layer order.
pub fn attention_long_csv(out: &ForwardOutput) -> String {
    let mut s = String::from("layer,row,col,value\n");
    for (l, heads) in out.attention.iter().enumerate() {
        for head in heads {
            for ((i, j), &v) in head.indexed_iter() {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    l + 1,
                    i + 1,
                    j + 1,
                    format_float(v)
                ));
            }
        }
    }
    s
}

/// Row-major matrix dump with a leading dimension header `rows,cols`.
pub fn matrix_csv(matrix: &mtd::ndarray::Array2<f64>) -> String {
    let mut s = format!("{},{}\n", matrix.nrows(), matrix.ncols());
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Known keys for the plain-text config format: the CLI flags minus
/// `--config` itself.
pub const CONFIG_KEYS: &[&str] = &[
    "q",
    "m",
    "T",
    "seed",
    "eta",
    "steps",
    "estimator",
    "grid-min",
    "grid-max",
    "grid-points",
    "delta",
    "beta",
    "burn-in",
    "samples",
    "out",
    "num-seq",
];

/// Parses `key=value` lines; `#` starts a comment, blank lines are ignored,
/// unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("config line {}: expected key=value", no + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!(
                "config line {}: unknown key '{key}'",
                no + 1
            )));
        }
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            q: 3,
            m: 2,
            seq_lengths: vec![16, 32],
            num_sequences: 8,
            estimators: vec![
                EstimatorSel::Md(1),
                EstimatorSel::Constructed,
                EstimatorSel::Em,
                EstimatorSel::Exact,
            ],
            master_seed: 11,
            eta_policy: EtaPolicy::DefaultEta,
            delta: [100.0; 3],
            beta: None,
            gamma_reg: 1.0,
            burn_in: 50,
            num_samples: 100,
            pi_override: None,
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for name in [
            "md-1",
            "md-4",
            "em",
            "gibbs",
            "exact",
            "constructed",
            "regularized",
        ] {
            let sel: EstimatorSel = name.parse().unwrap();
            assert_eq!(sel.to_string(), name);
        }
        assert!("md-0".parse::<EstimatorSel>().is_err());
        assert!("md-x".parse::<EstimatorSel>().is_err());
        assert!("bogus".parse::<EstimatorSel>().is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_covers_every_cell() {
        let spec = small_spec();
        let mut a = run_sweep(&spec).unwrap();
        let mut b = run_sweep(&spec).unwrap();
        clear_wall_times(&mut a);
        clear_wall_times(&mut b);
        assert_eq!(csv_string(&a), csv_string(&b));
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn kl_means_are_never_negative() {
        let spec = small_spec();
        let rows = run_sweep(&spec).unwrap();
        for row in &rows {
            if let RowOutcome::Done { kl_mean, .. } = &row.outcome {
                assert!(*kl_mean >= -1e-12);
            }
        }
    }

    #[test]
    fn uniform_transition_rows_null_every_estimator() {
        // Identical transition rows make every predictive uniform, so the
        // whole pipeline must report zero divergence for every estimator.
        let mut spec = small_spec();
        spec.pi_override = Some(TransitionMatrix::uniform(3));
        spec.estimators = vec![
            EstimatorSel::Md(1),
            EstimatorSel::Md(3),
            EstimatorSel::Constructed,
            EstimatorSel::Em,
            EstimatorSel::Gibbs,
            EstimatorSel::Exact,
            EstimatorSel::Regularized,
        ];
        let rows = run_sweep(&spec).unwrap();
        for row in &rows {
            if let RowOutcome::Done { kl_mean, .. } = &row.outcome {
                assert!(
                    kl_mean.abs() <= 1e-12,
                    "{} at T={} has KL {kl_mean}",
                    row.estimator,
                    row.t
                );
            }
        }
    }

    #[test]
    fn exact_rows_skip_beyond_the_guard() {
        let mut spec = small_spec();
        spec.seq_lengths = vec![64];
        spec.estimators = vec![EstimatorSel::Exact];
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        match &rows[0].outcome {
            RowOutcome::Skipped { reason } => {
                assert!(reason.contains("enumeration too large"), "{reason}");
            }
            other => panic!("expected skip, got {other:?}"),
        }
        let text = csv_string(&rows);
        assert!(text.contains("64,exact,skipped,skipped,skipped,0"));
    }

    #[test]
    fn csv_round_trips_byte_exactly() {
        let spec = small_spec();
        let mut rows = run_sweep(&spec).unwrap();
        clear_wall_times(&mut rows);
        let text = csv_string(&rows);
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(csv_string(&parsed), text);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn empty_rows_emit_a_header_only_file() {
        assert_eq!(
            csv_string(&[]),
            "T,estimator,kl_mean,kl_stderr,eta,wall_ms\n"
        );
    }

    #[test]
    fn emit_csv_reports_unwritable_paths() {
        let rows = Vec::new();
        let err = emit_csv(&rows, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        match err {
            Error::Io { path, .. } => assert!(path.contains("nonexistent-dir")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn config_parsing_handles_comments_and_rejects_unknown_keys() {
        let text = "# sweep setup\nq = 5\nm=4\nT = 64,256\nnum-seq = 10 # small\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map["q"], "5");
        assert_eq!(map["T"], "64,256");
        assert_eq!(map["num-seq"], "10");
        assert!(parse_config("unknown = 3\n").is_err());
        assert!(parse_config("q 5\n").is_err());
    }

    #[test]
    fn grid_policy_tunes_eta() {
        let mut spec = small_spec();
        spec.seq_lengths = vec![48];
        spec.num_sequences = 16;
        spec.estimators = vec![EstimatorSel::Md(1)];
        spec.eta_policy = EtaPolicy::Grid(EtaGrid::new(1e-4, 1e-1, 60).unwrap());
        let rows = run_sweep(&spec).unwrap();
        match rows[0].outcome {
            RowOutcome::Done { eta, .. } => {
                // Endpoints are reconstructed through exp(ln ·), so allow ulps.
                assert!((1e-4 * (1.0 - 1e-12)..=1e-1 * (1.0 + 1e-12)).contains(&eta));
            }
            _ => panic!("expected a done row"),
        }
    }

    #[test]
    fn constructed_and_md1_agree_per_cell() {
        let mut spec = small_spec();
        spec.seq_lengths = vec![24];
        spec.estimators = vec![EstimatorSel::Md(1), EstimatorSel::Constructed];
        let rows = run_sweep(&spec).unwrap();
        let kl = |row: &ResultRow| match row.outcome {
            RowOutcome::Done { kl_mean, .. } => kl_mean,
            _ => panic!("expected done"),
        };
        assert!((kl(&rows[0]) - kl(&rows[1])).abs() < 1e-6);
    }

    #[test]
    fn attention_csv_has_one_line_per_entry() {
        let mut rng = Rng::new(5);
        let pi = TransitionMatrix::sample(3, &mut rng.child(0)).unwrap();
        let cfg = ModelConfig::new(3, 2, 8).unwrap();
        let lambda = sample_mixture_weights(&DirichletPrior::flat(2), &mut rng);
        let seq = generate_sequence(&cfg, &pi, &lambda, &mut rng).unwrap();
        let net = construct_weights(&pi, &cfg, [100.0; 3], 1.0).unwrap();
        let out = net.forward(&seq).unwrap();
        let text = attention_long_csv(&out);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer,row,col,value");
        assert_eq!(lines.len(), 1 + 3 * 8 * 8);
        let matrix = matrix_csv(&out.hidden[1]);
        assert!(matrix.starts_with("8,8\n"));
    }
}
