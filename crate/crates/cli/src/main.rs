use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use onebit_core::harness::{
    grid_search_baseline, preset, run_experiment, train_variant, write_realization_csv, ExperimentConfig, GridConfig,
    PRESET_NAMES,
};
use onebit_core::numerics::RngStream;
use onebit_core::signal_model::{
    consistency_violations, encode, mse_amplitude, sample_signal, EncodeMode, SensingModel, SignalSpec,
};
use onebit_core::solvers::{solve, ClassicAlgorithm, SolverConfig};
use onebit_core::training::write_training_log;
use onebit_core::unfolded::{Checkpoint, Variant};

/// One-bit compressive sensing: classic solvers, unfolded networks and the
/// figure experiments.
///
/// Set RAYON_NUM_THREADS to control the number of worker threads; results do
/// not depend on it.
#[derive(Parser)]
#[command(name = "onebit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in experiment presets.
    PresetList {
        /// Print the full JSON configuration of one preset.
        #[arg(long)]
        show: Option<String>,
    },
    /// Train an unfolded network and write its checkpoint.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        variant: Variant,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override epochs per round.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run an experiment and write its summary CSV.
    Eval {
        #[command(flatten)]
        source: ConfigSource,
        /// Checkpoint file; the variant is read from the file. Repeatable.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-realization CSV path.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one classic solver on one random instance and dump its trajectory.
    Solve {
        #[arg(long)]
        algorithm: ClassicAlgorithm,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step size δ (RFPI family); grid-searched when omitted.
        #[arg(long)]
        step_size: Option<f64>,
        /// Penalty α; grid-searched when omitted.
        #[arg(long)]
        penalty: Option<f64>,
        /// Trajectory CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search the fixed parameters of a classic algorithm.
    GridSearch {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        algorithm: ClassicAlgorithm,
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// Built-in preset name (see `preset-list`).
    #[arg(long)]
    preset: Option<String>,
    /// Experiment configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.preset, &self.config) {
            (Some(name), _) => Ok(preset(name)?),
            (None, Some(path)) => {
                ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
            }
            (None, None) => bail!("pass --preset or --config"),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PresetList { show } => preset_list(show.as_deref()),
        Command::Train {
            source,
            variant,
            out,
            log,
            seed,
            epochs,
        } => {
            let mut cfg = source.load()?;
            if let Some(e) = epochs {
                cfg.training.epochs_per_round = e;
            }
            let (checkpoint, outcome) = train_variant(&cfg, variant, seed)?;
            checkpoint.save(&out)?;
            if let Some(path) = log {
                write_training_log(&path, &outcome.log)?;
            }
            if let Some(last) = outcome.log.last() {
                log::info!(
                    "final eval MSE: amplitude {:.4e}, direction {:.4e}",
                    last.eval_mse_amplitude,
                    last.eval_mse_direction
                );
            }
            log::info!("wrote {}", out.display());
            Ok(())
        }
        Command::Eval {
            source,
            checkpoint,
            out,
            dump,
            realizations,
            seed,
        } => {
            let mut cfg = source.load()?;
            for path in checkpoint {
                let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                cfg.checkpoints.insert(ck.variant(), path);
            }
            if let Some(r) = realizations {
                cfg.realizations = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.output = out.clone();
            let summary = run_experiment(&cfg)?;
            if out.is_none() {
                let mut w = csv::Writer::from_writer(std::io::stdout().lock());
                for row in &summary.rows {
                    w.serialize(row)?;
                }
                w.flush()?;
            }
            if let Some(path) = dump {
                write_realization_csv(&path, &summary.per_realization)?;
            }
            for (algorithm, b) in &summary.baselines {
                log::info!("{algorithm}: δ = {}, α = {}", b.step_size, b.penalty);
            }
            let failures: usize = summary.failures.values().sum();
            log::info!("failures: {failures}");
            Ok(())
        }
        Command::Solve {
            algorithm,
            n,
            m,
            k,
            iters,
            seed,
            step_size,
            penalty,
            out,
        } => solve_instance(algorithm, n, m, k, iters, seed, step_size, penalty, out.as_deref()),
        Command::GridSearch {
            source,
            algorithm,
            trials,
        } => {
            let cfg = source.load()?;
            let mut grid = cfg.grid.clone();
            if let Some(t) = trials {
                grid.trials = t;
            }
            let pool = cfg.training.pool(Variant::from_classic(algorithm));
            let result = grid_search_baseline(algorithm, cfg.n, cfg.m, cfg.layers, &pool, &grid)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

fn preset_list(show: Option<&str>) -> Result<()> {
    if let Some(name) = show {
        println!("{}", preset(name)?.to_json()?);
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    for name in PRESET_NAMES {
        let cfg = preset(name)?;
        let cases: Vec<&str> = cfg.cases.iter().map(|c| c.id.as_str()).collect();
        writeln!(
            out,
            "{name:<10} n={:<4} m={:<4} L={:<3} realizations={:<4} K={:?} cases={}",
            cfg.n,
            cfg.m,
            cfg.layers,
            cfg.realizations,
            cfg.sparsity,
            cases.join(",")
        )?;
    }
    let d = preset("fig2")?;
    let g = GridConfig::default();
    writeln!(
        out,
        "defaults: seed={} t={} batch_size={} epochs_per_round={} steps_per_epoch={} learning_rate={} \
         eval_realizations={} lambda={} grid_trials={} grid_seed={}",
        d.seed,
        d.t,
        d.training.batch_size,
        d.training.epochs_per_round,
        d.training.steps_per_epoch,
        d.training.learning_rate,
        d.training.eval_realizations,
        d.training.lambda,
        g.trials,
        g.seed
    )?;
    writeln!(out, "grid δ: {:?}", g.step_sizes)?;
    writeln!(out, "grid α: {:?}", g.penalties)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve_instance(
    algorithm: ClassicAlgorithm,
    n: usize,
    m: usize,
    k: usize,
    iters: usize,
    seed: u64,
    step_size: Option<f64>,
    penalty: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let (step_size, penalty) = match (step_size, penalty) {
        (Some(d), Some(a)) => (d, a),
        (None, Some(a)) if algorithm.uses_sparsity() => (a / 2.0, a),
        _ => {
            let grid = GridConfig::default();
            let b = grid_search_baseline(algorithm, n, m, iters, &[k], &grid)?.baseline;
            log::info!("grid-searched δ = {}, α = {}", b.step_size, b.penalty);
            (b.step_size, b.penalty)
        }
    };
    let rng = RngStream::new(seed);
    let x = sample_signal(SignalSpec::new(n, k)?, &mut rng.child("signal"))?;
    let mut model = SensingModel::gaussian(m, n, &mut rng.child("sensing"));
    if !algorithm.uses_thresholds() {
        model = SensingModel::zero_threshold(model.phi);
    }
    let config = if algorithm.uses_sparsity() {
        SolverConfig::biht(penalty, k, iters)
    } else {
        SolverConfig::rfpi(step_size, penalty, iters)
    };
    let meas = encode(&model, x.values(), EncodeMode::Exact)?;
    let traj = solve(algorithm, &model, &meas, &config)?;

    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![
        "iteration".to_string(),
        "mse_amplitude".into(),
        "mse_direction".into(),
        "violations".into(),
    ];
    header.extend((0..n).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for i in 0..traj.len() {
        let est = traj.readout(i)?;
        let mut record = vec![
            i.to_string(),
            mse_amplitude(x.values(), &est)?.to_string(),
            onebit_core::signal_model::mse_direction(x.values(), &est)
                .map(|v| v.to_string())
                .unwrap_or_else(|_| "NaN".into()),
            consistency_violations(&meas, &model, &est)?.to_string(),
        ];
        record.extend(est.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
