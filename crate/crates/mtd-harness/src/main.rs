//! Command-line front end for the MTD testbed.
//!
//! Subcommands: `gen` (emit a sequence), `estimate` (one estimator on one
//! sequence), `sweep` (KL sweep to CSV), `construct-check` (construction vs
//! analytic estimator), `attention` (attention/hidden-state export), and
//! `verify-theory` (analytic checks with a pass/fail table).
//!
//! Every flag can also be set through `--config <file>` with one
//! `key=value` per line (keys mirror the flags, `#` comments); flags given
//! on the command line win.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use mtd::bayes::{exact_posterior_mean, gibbs_posterior_mean};
use mtd::construction::{attention_report, beta_for_eta, construct_weights, verify_construction};
use mtd::estimators::{
    default_eta, eg_multi_step, em_fit, entropy_regularized_estimate, one_step_md, safe_eta,
    EtaGrid, LearningRate,
};
use mtd::model::{generate_sequence, predictive_distribution, sample_mixture_weights};
use mtd::theory::{
    check_score_scaling, check_smoothness_bound, first_order_remainders, jacobian_report,
    mc_bayes_jacobian,
};
use mtd::{DirichletPrior, MixtureWeights, ModelConfig, Rng, TokenSequence, TransitionMatrix};
use mtd_harness::{
    attention_long_csv, clear_wall_times, csv_string, emit_csv, matrix_csv, parse_config,
    run_sweep, EstimatorSel, EtaPolicy, ExperimentSpec, RowOutcome,
};

const CONSTRUCTION_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "mtd",
    about = "Mixture-of-transition-distributions testbed: data generation, mixture-weight estimators, and the attention-only transformer construction",
    long_about = None,
    after_help = "Sweeps report KL(true predictive || estimator predictive): the true \
next-token distribution under the sequence's own mixture weights versus the \
estimator's, with estimators fitted on the first T-1 tokens. Estimator \
predictives are floored at 1e-12 before the divergence."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate one sequence and print its tokens (space separated)
    Gen(RawOpts),
    /// Run one estimator on one generated sequence; prints the mixture
    /// estimate and its next-token predictive
    Estimate(RawOpts),
    /// KL sweep across sequence lengths and estimators, emitted as CSV
    Sweep(RawOpts),
    /// Build the transformer construction and report its deviations from the
    /// analytic one-step estimator (nonzero exit above 1e-6)
    ConstructCheck(RawOpts),
    /// Export the construction's attention maps (and hidden states) as CSV
    Attention(RawOpts),
    /// Run the analytic checks and print a pass/fail table
    VerifyTheory(RawOpts),
}

#[derive(Args, Clone, Default)]
struct RawOpts {
    /// Alphabet size
    #[arg(long)]
    q: Option<usize>,
    /// Model order (number of lags)
    #[arg(long)]
    m: Option<usize>,
    /// Sequence length; comma-separated list for sweep
    #[arg(long = "T")]
    t: Option<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate: a number, or "default" (1/(m+1)), or "safe" (1/((T-m)m²))
    #[arg(long)]
    eta: Option<String>,
    /// Steps for the md-k estimator
    #[arg(long)]
    steps: Option<usize>,
    /// Estimator name (`md-<k>`, em, gibbs, exact, constructed, regularized);
    /// comma-separated list for sweep
    #[arg(long)]
    estimator: Option<String>,
    /// Grid-search lower bound (selects the grid eta policy)
    #[arg(long)]
    grid_min: Option<f64>,
    /// Grid-search upper bound
    #[arg(long)]
    grid_max: Option<f64>,
    /// Number of log-spaced grid points
    #[arg(long)]
    grid_points: Option<usize>,
    /// Attention saturation constant(s): one value or three comma-separated
    #[arg(long)]
    delta: Option<String>,
    /// Construction β (otherwise derived from the eta policy)
    #[arg(long)]
    beta: Option<f64>,
    /// Gibbs burn-in iterations
    #[arg(long)]
    burn_in: Option<usize>,
    /// Gibbs samples kept after burn-in
    #[arg(long)]
    samples: Option<usize>,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sequences per sweep cell
    #[arg(long)]
    num_seq: Option<usize>,
    /// Plain-text key=value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep measured wall times in the sweep CSV (off by default so output
    /// bytes depend only on seed and spec)
    #[arg(long)]
    timing: bool,
}

/// Flag values merged with the config file (command line wins).
struct Opts {
    cli: RawOpts,
    file: BTreeMap<String, String>,
}

impl Opts {
    fn load(cli: RawOpts) -> anyhow::Result<Self> {
        let file = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Opts { cli, file })
    }

    fn merged<T: Clone + FromStr>(&self, cli: &Option<T>, key: &str) -> anyhow::Result<Option<T>> {
        if let Some(v) = cli {
            return Ok(Some(v.clone()));
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| anyhow!("--{key}: invalid value '{raw}'")),
            None => Ok(None),
        }
    }

    fn q(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.q, "q")?.unwrap_or(5))
    }
    fn m(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.m, "m")?.unwrap_or(4))
    }
    fn seed(&self) -> anyhow::Result<u64> {
        Ok(self.merged(&self.cli.seed, "seed")?.unwrap_or(0))
    }
    fn steps(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.steps, "steps")?.unwrap_or(2))
    }
    fn burn_in(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.burn_in, "burn-in")?.unwrap_or(200))
    }
    fn samples(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.samples, "samples")?.unwrap_or(2000))
    }
    fn num_seq(&self) -> anyhow::Result<usize> {
        Ok(self.merged(&self.cli.num_seq, "num-seq")?.unwrap_or(200))
    }
    fn beta(&self) -> anyhow::Result<Option<f64>> {
        self.merged(&self.cli.beta, "beta")
    }
    fn out(&self) -> anyhow::Result<Option<PathBuf>> {
        self.merged(&self.cli.out, "out")
    }
    fn eta_raw(&self) -> anyhow::Result<Option<String>> {
        self.merged(&self.cli.eta, "eta")
    }
    fn estimator_raw(&self) -> anyhow::Result<Option<String>> {
        self.merged(&self.cli.estimator, "estimator")
    }

    fn t_single(&self) -> anyhow::Result<usize> {
        let list = self.t_list()?;
        if list.len() != 1 {
            bail!("--T: exactly one sequence length expected here, got {list:?}");
        }
        Ok(list[0])
    }

    fn t_list(&self) -> anyhow::Result<Vec<usize>> {
        self.t_list_or("64")
    }

    fn t_list_or(&self, default: &str) -> anyhow::Result<Vec<usize>> {
        let raw = self
            .merged(&self.cli.t, "T")?
            .unwrap_or_else(|| default.to_string());
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| anyhow!("--T: invalid number '{s}'"))
            })
            .collect()
    }

    fn delta(&self) -> anyhow::Result<[f64; 3]> {
        let raw = self
            .merged(&self.cli.delta, "delta")?
            .unwrap_or_else(|| "100".to_string());
        let parts: Vec<f64> = raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("--delta: invalid number '{s}'"))
            })
            .collect::<anyhow::Result<_>>()?;
        match parts.as_slice() {
            [d] => Ok([*d; 3]),
            [a, b, c] => Ok([*a, *b, *c]),
            _ => bail!("--delta: one or three comma-separated values expected"),
        }
    }

    /// Grid flags present → grid policy; otherwise the eta flag; otherwise
    /// the closed-form default.
    fn eta_policy(&self) -> anyhow::Result<EtaPolicy> {
        let grid_min = self.merged(&self.cli.grid_min, "grid-min")?;
        let grid_max = self.merged(&self.cli.grid_max, "grid-max")?;
        let grid_points = self.merged(&self.cli.grid_points, "grid-points")?;
        if grid_min.is_some() || grid_max.is_some() || grid_points.is_some() {
            let grid = EtaGrid::new(
                grid_min.unwrap_or(1e-5),
                grid_max.unwrap_or(1e-1),
                grid_points.unwrap_or(1000),
            )?;
            return Ok(EtaPolicy::Grid(grid));
        }
        match self.eta_raw()?.as_deref() {
            None | Some("default") => Ok(EtaPolicy::DefaultEta),
            Some("safe") => Ok(EtaPolicy::SafeEta),
            Some(raw) => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| anyhow!("--eta: invalid value '{raw}'"))?;
                Ok(EtaPolicy::Fixed(v))
            }
        }
    }

    fn eta_for(&self, cfg: &ModelConfig) -> anyhow::Result<LearningRate> {
        match self.eta_policy()? {
            EtaPolicy::Fixed(v) => Ok(LearningRate::new(v)?),
            EtaPolicy::SafeEta => Ok(safe_eta(cfg)),
            EtaPolicy::DefaultEta => Ok(default_eta(cfg.m)),
            EtaPolicy::Grid(_) => bail!("grid search is only available in sweep"),
        }
    }

    fn estimators(&self) -> anyhow::Result<Vec<EstimatorSel>> {
        let raw = self
            .estimator_raw()?
            .unwrap_or_else(|| "md-1,constructed,em,gibbs".to_string());
        let steps = self.steps()?;
        raw.split(',')
            .map(|s| parse_estimator(s.trim(), steps))
            .collect()
    }
}

/// `md-k` means "use --steps"; everything else parses directly.
fn parse_estimator(name: &str, steps: usize) -> anyhow::Result<EstimatorSel> {
    if name == "md-k" {
        if steps == 0 {
            bail!("--steps must be >= 1");
        }
        return Ok(EstimatorSel::Md(steps));
    }
    Ok(EstimatorSel::from_str(name)?)
}

/// One transition matrix and one sequence instance from a master seed:
/// π from child stream 0, mixture weights and trajectory from child stream 1.
fn build_instance(
    q: usize,
    m: usize,
    t: usize,
    seed: u64,
) -> anyhow::Result<(TransitionMatrix, MixtureWeights, TokenSequence)> {
    let cfg = ModelConfig::new(q, m, t)?;
    let root = Rng::new(seed);
    let pi = TransitionMatrix::sample(q, &mut root.child(0))?;
    let mut r = root.child(1);
    let lambda = sample_mixture_weights(&DirichletPrior::flat(m), &mut r);
    let seq = generate_sequence(&cfg, &pi, &lambda, &mut r)?;
    Ok((pi, lambda, seq))
}

fn floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.9e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen(opts: &Opts) -> anyhow::Result<()> {
    let (q, m, t, seed) = (opts.q()?, opts.m()?, opts.t_single()?, opts.seed()?);
    let (_, _, seq) = build_instance(q, m, t, seed)?;
    let line = seq
        .tokens()
        .iter()
        .map(|y| y.to_string())
        .collect::<Vec<_>>()
        .join(" ")
        + "\n";
    write_or_print(&opts.out()?, &line)
}

fn cmd_estimate(opts: &Opts) -> anyhow::Result<()> {
    let (q, m, t, seed) = (opts.q()?, opts.m()?, opts.t_single()?, opts.seed()?);
    let cfg = ModelConfig::new(q, m, t)?;
    let (pi, lambda_true, seq) = build_instance(q, m, t, seed)?;
    let raw = opts.estimator_raw()?.unwrap_or_else(|| "md-1".to_string());
    let est = parse_estimator(raw.trim(), opts.steps()?)?;
    let prior = DirichletPrior::flat(m);

    let (lambda_hat, predictive) = match est {
        EstimatorSel::Md(k) => {
            let eta = opts.eta_for(&cfg)?;
            let lambda = if k == 1 {
                one_step_md(&pi, &seq, m, eta)
            } else {
                eg_multi_step(&pi, &seq, m, eta, k).0
            };
            let pred = predictive_distribution(&pi, &lambda, &seq)?;
            (lambda, pred)
        }
        EstimatorSel::Em => {
            let (lambda, trace) = em_fit(&pi, &seq, &MixtureWeights::uniform(m), 1e-10, 10_000);
            if !trace.converged {
                eprintln!("warning: EM did not converge within 10000 iterations");
            }
            let pred = predictive_distribution(&pi, &lambda, &seq)?;
            (lambda, pred)
        }
        EstimatorSel::Gibbs => {
            let mut rng = Rng::new(seed).child(2);
            let post = gibbs_posterior_mean(
                &pi,
                &prior,
                &seq,
                opts.burn_in()?,
                opts.samples()?,
                &mut rng,
            );
            let pred = predictive_distribution(&pi, &post.mean, &seq)?;
            (post.mean, pred)
        }
        EstimatorSel::Exact => {
            let post = exact_posterior_mean(&pi, &prior, &seq)?;
            let pred = predictive_distribution(&pi, &post.mean, &seq)?;
            (post.mean, pred)
        }
        EstimatorSel::Constructed => {
            let eta = opts.eta_for(&cfg)?;
            let beta = opts.beta()?.unwrap_or_else(|| beta_for_eta(eta, &cfg));
            let net = construct_weights(&pi, &cfg, opts.delta()?, beta)?;
            let out = net.forward(&seq)?;
            (out.lambda_readout()?, out.prediction)
        }
        EstimatorSel::Regularized => {
            let (lambda, _) =
                entropy_regularized_estimate(&pi, &seq, m, 1.0, safe_eta(&cfg), 200_000, 1e-10);
            let pred = predictive_distribution(&pi, &lambda, &seq)?;
            (lambda, pred)
        }
    };

    println!("estimator: {est}");
    println!("lambda_true: {}", floats(lambda_true.as_slice()));
    println!("lambda_hat: {}", floats(lambda_hat.as_slice()));
    println!("predictive: {}", floats(&predictive));
    Ok(())
}

fn cmd_sweep(opts: &Opts) -> anyhow::Result<()> {
    let spec = ExperimentSpec {
        q: opts.q()?,
        m: opts.m()?,
        seq_lengths: opts.t_list_or("64,256,1024")?,
        num_sequences: opts.num_seq()?,
        estimators: opts.estimators()?,
        master_seed: opts.seed()?,
        eta_policy: opts.eta_policy()?,
        delta: opts.delta()?,
        beta: opts.beta()?,
        gamma_reg: 1.0,
        burn_in: opts.burn_in()?,
        num_samples: opts.samples()?,
        pi_override: None,
    };
    let mut rows = run_sweep(&spec)?;
    for row in &rows {
        if let RowOutcome::Skipped { reason } = &row.outcome {
            eprintln!("skipped T={} {}: {reason}", row.t, row.estimator);
        }
    }
    if !opts.cli.timing {
        clear_wall_times(&mut rows);
    }
    match opts.out()? {
        Some(path) => emit_csv(&rows, &path)?,
        None => print!("{}", csv_string(&rows)),
    }
    Ok(())
}

fn cmd_construct_check(opts: &Opts) -> anyhow::Result<()> {
    let (q, m, t, seed) = (opts.q()?, opts.m()?, opts.t_single()?, opts.seed()?);
    let cfg = ModelConfig::new(q, m, t)?;
    let (pi, _, seq) = build_instance(q, m, t, seed)?;
    let beta = match opts.beta()? {
        Some(b) => b,
        None => beta_for_eta(opts.eta_for(&cfg)?, &cfg),
    };
    let report = verify_construction(&pi, &cfg, &seq, opts.delta()?, beta)?;
    println!(
        "layer1 attention vs responsibilities: max dev {:.3e}",
        report.layer1_max_dev
    );
    println!(
        "lambda readout vs one-step estimator: max dev {:.3e}",
        report.lambda_max_dev
    );
    println!(
        "prediction vs mixture of transition rows: max dev {:.3e}",
        report.prediction_max_dev
    );
    let max = report.max_dev();
    let pass = max < CONSTRUCTION_TOL;
    println!(
        "overall max deviation {max:.3e} (tolerance {CONSTRUCTION_TOL:.0e}): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    if !pass {
        std::process::exit(1);
    }
    Ok(())
}

fn cmd_attention(opts: &Opts) -> anyhow::Result<()> {
    let (q, m, t, seed) = (opts.q()?, opts.m()?, opts.t_single()?, opts.seed()?);
    let cfg = ModelConfig::new(q, m, t)?;
    let (pi, _, seq) = build_instance(q, m, t, seed)?;
    let beta = match opts.beta()? {
        Some(b) => b,
        None => beta_for_eta(opts.eta_for(&cfg)?, &cfg),
    };
    let net = construct_weights(&pi, &cfg, opts.delta()?, beta)?;
    let out = net.forward(&seq)?;
    let report = attention_report(&out, &cfg)?;
    let summary = format!(
        "layer1 min band mass: {:.9e}\nlayer2 last-row max dev from uniform: {:.9e}\nlayer3 last-row band mass: {:.9e}\n",
        report.layer1_min_band_mass,
        report.layer2_last_row_max_dev,
        report.layer3_last_row_band_mass
    );
    match opts.out()? {
        Some(path) => {
            std::fs::write(&path, attention_long_csv(&out))
                .with_context(|| format!("writing {}", path.display()))?;
            for (l, h) in out.hidden.iter().enumerate().skip(1) {
                let hidden_path = path.with_extension(format!("hidden{l}.csv"));
                std::fs::write(&hidden_path, matrix_csv(h))
                    .with_context(|| format!("writing {}", hidden_path.display()))?;
            }
            print!("{summary}");
        }
        None => {
            print!("{}", attention_long_csv(&out));
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn cmd_verify_theory(opts: &Opts) -> anyhow::Result<()> {
    let (q, m, t, seed) = (opts.q()?, opts.m()?, opts.t_single()?, opts.seed()?);
    let mut all_pass = true;
    let line = |name: &str, detail: String, pass: bool| -> bool {
        println!("{name}: {detail} {}", if pass { "PASS" } else { "FAIL" });
        pass
    };

    let report = jacobian_report(m);
    all_pass &= line(
        "jacobian-equality",
        format!("m={m} max_abs_diff={:.3e} (tol 1e-12)", report.max_abs_diff),
        report.max_abs_diff < 1e-12,
    );

    let (mc, se) = mc_bayes_jacobian(m, 200_000, 1e-2, 50, &Rng::new(seed));
    let exact = &report.bayes_jacobian;
    let mut worst_sigma: f64 = 0.0;
    for k in 0..m {
        for j in 0..m {
            let sigma = (mc[[k, j]] - exact[[k, j]]).abs() / se[[k, j]].max(1e-9);
            worst_sigma = worst_sigma.max(sigma);
        }
    }
    all_pass &= line(
        "mc-jacobian",
        format!("m={m} worst deviation {worst_sigma:.2} sigma (tol 3)"),
        worst_sigma <= 3.0,
    );

    let scales = [1e-2, 5e-3, 2.5e-3];
    let mut rng = Rng::new(seed).child(1);
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = f64::NEG_INFINITY;
    for _ in 0..50 {
        let mut u: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        let rems = first_order_remainders(m, &u, &scales);
        for w in rems.windows(2) {
            let ratio = w[0] / w[1];
            ratio_lo = ratio_lo.min(ratio);
            ratio_hi = ratio_hi.max(ratio);
        }
    }
    all_pass &= line(
        "remainder-decay",
        format!("m={m} ratios in [{ratio_lo:.3}, {ratio_hi:.3}] (band [3.0, 5.3])"),
        ratio_lo >= 3.0 && ratio_hi <= 5.3,
    );

    let mut holds = true;
    let smooth_rng = Rng::new(seed).child(2);
    for trial in 0..100u64 {
        let mut r = smooth_rng.child(trial);
        let pi = TransitionMatrix::sample(q, &mut r.child(0))?;
        let span = t.saturating_sub(m + 1).max(1);
        let t_trial = m + 2 + (trial as usize % span);
        let cfg = ModelConfig::new(q, m, t_trial)?;
        let lambda = sample_mixture_weights(&DirichletPrior::flat(m), &mut r);
        let seq = generate_sequence(&cfg, &pi, &lambda, &mut r)?;
        let report = check_smoothness_bound(&pi, &seq, m);
        holds &= report.holds && report.global_holds;
    }
    all_pass &= line(
        "smoothness-bound",
        format!("q={q} m={m} 100 instances, opnorm <= (T-m)m^2"),
        holds,
    );

    let mut score_rng = Rng::new(seed).child(3);
    let pi = TransitionMatrix::sample(q, &mut score_rng.child(0))?;
    let lambda = sample_mixture_weights(&DirichletPrior::flat(m), &mut score_rng);
    let base = t.max(m + 2);
    let t_values = [base, 2 * base, 4 * base];
    let scaling = check_score_scaling(&pi, &lambda, &t_values, 50, &score_rng.child(1));
    let min_r2 = scaling
        .r_squared
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    all_pass &= line(
        "score-scaling",
        format!("linear fit over T={t_values:?}, min R^2 = {min_r2:.5} (tol 0.99)"),
        min_r2 > 0.99,
    );

    if !all_pass {
        std::process::exit(1);
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let (raw, run): (RawOpts, fn(&Opts) -> anyhow::Result<()>) = match cli.cmd {
        Cmd::Gen(raw) => (raw, cmd_gen),
        Cmd::Estimate(raw) => (raw, cmd_estimate),
        Cmd::Sweep(raw) => (raw, cmd_sweep),
        Cmd::ConstructCheck(raw) => (raw, cmd_construct_check),
        Cmd::Attention(raw) => (raw, cmd_attention),
        Cmd::VerifyTheory(raw) => (raw, cmd_verify_theory),
    };
    let result = Opts::load(raw).and_then(|opts| run(&opts));
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
