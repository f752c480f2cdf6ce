//! The four subcommands.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use dgfed_core::accountant::AccountantState;
use dgfed_core::compressor::{clip, sensitivity, ClippedUpdate};
use dgfed_core::discrete_gaussian::DiscreteGaussian;
use dgfed_core::fed_sim::{
    run_training_with, AggregationPath, ClientExecutor, Protocol, RoundTranscript, Serial, Task, TrainingOutcome,
    MAX_OVERFLOW_PROBABILITY,
};
use dgfed_core::lattice::LatticeSpec;
use dgfed_core::metrics::{mse_bound, mse_trial, random_unit_updates, MseBoundInputs, MseEstimate};
use dgfed_core::rng::{derive_seed, stream, Purpose};
use dgfed_core::secure_agg::overflow_probability;
use dgfed_core::Error;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MsePoint};
use crate::error::CliError;
use crate::exec::Parallel;
use crate::output::{opt_real, real, writer};

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub override_overflow_check: bool,
    pub transcript: Option<PathBuf>,
    pub parallel: bool,
}

fn invalid_to_config(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(msg) => CliError::config(msg),
        other => other.into(),
    }
}

/// Loads, validates and runs a training configuration.
pub fn train_outcome(args: &TrainArgs) -> Result<(ExperimentConfig, TrainingOutcome), CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let mut round = cfg.round_config().map_err(CliError::config)?;
    if let Some(seed) = args.seed {
        round.seed = seed;
    }
    round.allow_overflow_risk = args.override_overflow_check;
    let task = Task::generate(&cfg.task_spec(), round.seed).map_err(invalid_to_config)?;
    round.resolve(task.param_count()).map_err(invalid_to_config)?;
    let mut last = Instant::now();
    let stamp = |t: &mut RoundTranscript| {
        t.wall_time = Some(last.elapsed());
        last = Instant::now();
    };
    let outcome = if args.parallel {
        run_training_with(&task, &round, &Parallel, stamp)?
    } else {
        run_training_with(&task, &round, &Serial, stamp)?
    };
    Ok((cfg, outcome))
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let (cfg, outcome) = train_outcome(args)?;
    let mut w = writer(args.out.as_deref())?;
    w.write_record(["round", "epsilon", "delta", "loss", "accuracy", "bytes_per_client", "mse_round"])?;
    for m in &outcome.metrics {
        w.write_record([
            m.round.to_string(),
            real(m.epsilon),
            real(cfg.protocol.delta),
            real(m.loss),
            opt_real(m.accuracy),
            m.bytes_per_client.to_string(),
            real(m.squared_error),
        ])?;
    }
    w.flush()?;
    if let Some(path) = &args.transcript {
        let mut t = writer(Some(path))?;
        t.write_record(["round", "client", "coordinate", "payload_int"])?;
        for tr in &outcome.transcripts {
            for (id, payload) in tr.selected.iter().zip(&tr.payloads) {
                for (c, v) in payload.iter().enumerate() {
                    t.write_record([tr.round.to_string(), id.to_string(), c.to_string(), v.to_string()])?;
                }
            }
            for (c, v) in tr.nu.iter().enumerate() {
                t.write_record([tr.round.to_string(), "-1".into(), c.to_string(), v.to_string()])?;
            }
        }
        t.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct MseBenchArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub override_overflow_check: bool,
    pub parallel: bool,
}

/// One evaluated cell of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseRow {
    pub point: MsePoint,
    pub d_pad: usize,
    pub estimate: MseEstimate,
    /// `None` when the noise hypothesis fails.
    pub bound: Option<f64>,
}

impl MseRow {
    pub fn flag(&self) -> &'static str {
        match self.bound {
            None => "hypothesis",
            Some(b) if self.estimate.mean > b + 3.0 * self.estimate.std_error => "exceeds",
            Some(_) => "ok",
        }
    }
}

fn point_protocol(p: &MsePoint, allow_overflow: bool) -> Result<Protocol, CliError> {
    let spec = LatticeSpec::new(p.g_max, p.k, p.q, p.participants).map_err(invalid_to_config)?;
    let protocol = Protocol::new(spec, p.sigma.max(0.0), p.dim, AggregationPath::Masked).map_err(invalid_to_config)?;
    if !(p.gamma > 0.0 && p.gamma <= 1.0) || p.clip.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || p.sigma < 0.0 {
        return Err(CliError::config("mse point needs gamma in (0, 1], clip > 0 and sigma ≥ 0"));
    }
    let overflow = overflow_probability(&spec, &protocol.wire, p.participants, p.sigma, protocol.d_pad)?;
    if overflow > MAX_OVERFLOW_PROBABILITY && !allow_overflow {
        return Err(CliError::config(format!(
            "mse point {p:?}: overflow probability {overflow:e} exceeds {MAX_OVERFLOW_PROBABILITY:e}"
        )));
    }
    Ok(protocol)
}

/// Evaluates every configured cell.
pub fn mse_rows(args: &MseBenchArgs) -> Result<Vec<MseRow>, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let bench = cfg
        .mse_bench
        .as_ref()
        .ok_or_else(|| CliError::config(format!("{}: missing [mse_bench] section", args.config.display())))?;
    if bench.point.is_empty() || bench.trials == 0 {
        return Err(CliError::config(format!("{}: mse_bench needs points and trials ≥ 1", args.config.display())));
    }
    let seed = args.seed.unwrap_or(cfg.protocol.seed);
    let protocols = bench
        .point
        .iter()
        .map(|p| point_protocol(p, args.override_overflow_check))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(bench.point.len());
    for (cell, (p, protocol)) in bench.point.iter().zip(&protocols).enumerate() {
        let updates: Vec<ClippedUpdate> = random_unit_updates(p.participants, p.dim, derive_seed(seed, Purpose::Dataset, cell as u64, 0))
            .into_iter()
            .map(|u| clip(u.values(), p.clip))
            .collect::<Result<_, _>>()?;
        let trial_seed = derive_seed(seed, Purpose::Trial, cell as u64, 0);
        let run = |t: usize| mse_trial(protocol, &updates, trial_seed, t as u64);
        let samples: Vec<f64> = if args.parallel {
            (0..bench.trials).into_par_iter().map(run).collect::<Result<_, _>>()?
        } else {
            (0..bench.trials).map(run).collect::<Result<_, _>>()?
        };
        let estimate = MseEstimate::from_samples(&samples)?;
        let inputs = MseBoundInputs {
            d: protocol.d_pad,
            n: p.participants,
            k: p.k,
            q: p.q,
            sigma: p.sigma,
            gamma: p.gamma,
            g_max: p.g_max,
        };
        let bound = match mse_bound(&inputs, bench.tail_reading.reading()) {
            Ok(b) => Some(b),
            Err(Error::HypothesisViolated(_)) => None,
            Err(e) => return Err(invalid_to_config(e)),
        };
        rows.push(MseRow {
            point: *p,
            d_pad: protocol.d_pad,
            estimate,
            bound,
        });
    }
    Ok(rows)
}

pub fn mse_bench(args: &MseBenchArgs) -> Result<(), CliError> {
    let rows = mse_rows(args)?;
    let mut w = writer(args.out.as_deref())?;
    w.write_record([
        "participants", "dim", "d_pad", "k", "q", "sigma", "gamma", "g_max", "clip", "trials", "empirical",
        "std_error", "bound", "flag",
    ])?;
    for r in &rows {
        let p = &r.point;
        w.write_record([
            p.participants.to_string(),
            p.dim.to_string(),
            r.d_pad.to_string(),
            p.k.to_string(),
            p.q.to_string(),
            real(p.sigma),
            real(p.gamma),
            real(p.g_max),
            real(p.clip),
            r.estimate.trials.to_string(),
            real(r.estimate.mean),
            real(r.estimate.std_error),
            opt_real(r.bound),
            r.flag().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AccountantArgs {
    /// Noise standard deviation, same units as `clip`.
    pub sigma: f64,
    pub clip: f64,
    pub levels: u32,
    pub dim: usize,
    pub gamma: f64,
    pub rounds: u64,
    pub delta: f64,
    pub out: Option<PathBuf>,
}

/// `(ε, α*)` and the cumulative curve.
pub fn accountant_state(args: &AccountantArgs) -> Result<AccountantState, CliError> {
    if args.dim == 0 || !(args.delta > 0.0 && args.delta < 1.0) {
        return Err(CliError::config("dim must be positive and delta in (0, 1)"));
    }
    let sens = sensitivity(args.clip, args.dim.next_power_of_two(), args.levels).map_err(invalid_to_config)?;
    let mut state = AccountantState::new(args.sigma, sens, args.gamma).map_err(invalid_to_config)?;
    state.record_rounds(args.rounds);
    Ok(state)
}

pub fn accountant(args: &AccountantArgs) -> Result<(), CliError> {
    let state = accountant_state(args)?;
    let (eps, alpha) = state.epsilon(args.delta)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    writeln!(lock, "epsilon = {}", real(eps))?;
    writeln!(lock, "alpha = {}", real(alpha))?;
    if args.out.is_none() {
        writeln!(lock)?;
    }
    drop(lock);
    let mut w = writer(args.out.as_deref())?;
    w.write_record(["alpha", "rdp_epsilon"])?;
    for (a, e) in state.cumulative().iter() {
        w.write_record([real(a), real(e)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SampleArgs {
    /// `σ'` on the integers.
    pub sigma: f64,
    pub count: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn sample(args: &SampleArgs) -> Result<(), CliError> {
    let dist = DiscreteGaussian::on_integers(args.sigma).map_err(invalid_to_config)?;
    let mut rng = stream(args.seed, Purpose::Sample, 0, 0);
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut out = std::io::BufWriter::new(sink);
    for _ in 0..args.count {
        writeln!(out, "{}", dist.sample(&mut rng)?.z())?;
    }
    out.flush()?;
    Ok(())
}

/// Generic entry used by tests: the same run under either executor.
pub fn run_with<E: ClientExecutor>(cfg: &ExperimentConfig, exec: &E) -> Result<TrainingOutcome, CliError> {
    let round = cfg.round_config().map_err(CliError::config)?;
    let task = Task::generate(&cfg.task_spec(), round.seed).map_err(invalid_to_config)?;
    Ok(dgfed_core::fed_sim::run_training(&task, &round, exec)?)
}
