use rayon::prelude::*;
use serde::Serialize;

use super::{direction_error, Baseline, GridConfig};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Vector};
use crate::signal_model::{encode, mse_amplitude, sample_signal, EncodeMode, SensingModel, SignalSpec};
use crate::solvers::{solve, ClassicAlgorithm, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridEntry {
    pub step_size: f64,
    pub penalty: f64,
    /// Mean final error over the trials; `+inf` when any trial blew up.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub algorithm: ClassicAlgorithm,
    pub baseline: Baseline,
    pub score: f64,
    pub table: Vec<GridEntry>,
}

struct Trial {
    x: Vec<f64>,
    model: SensingModel,
    sparsity: usize,
}

/// Picks the fixed parameters of a classic algorithm by exhaustive search.
///
/// Each candidate runs `iterations` iterations on the same `trials` seeded
/// instances (fresh Gaussian `Φ`, `b` and signal per trial, sparsity cycling
/// through `sparsities`). The score is the mean final direction MSE for the
/// zero-threshold algorithms and the mean final amplitude MSE for the
/// generalized ones; a run that collapses to zero counts as a zero estimate.
/// Ties go to the smaller `(δ, α)`.
pub fn grid_search_baseline(
    algorithm: ClassicAlgorithm,
    n: usize,
    m: usize,
    iterations: usize,
    sparsities: &[usize],
    grid: &GridConfig,
) -> Result<GridResult> {
    if grid.penalties.is_empty() || grid.trials == 0 || sparsities.is_empty() {
        return Err(Error::contract(
            "grid search needs candidates, trials and sparsity levels",
        ));
    }
    if !algorithm.uses_sparsity() && grid.step_sizes.is_empty() {
        return Err(Error::contract("grid search needs step-size candidates"));
    }
    let root = RngStream::new(grid.seed).child(algorithm.name());
    let trials = (0..grid.trials)
        .map(|i| {
            let mut rng = root.child(&format!("trial{i}"));
            let sparsity = sparsities[i % sparsities.len()];
            let x = sample_signal(SignalSpec::new(n, sparsity)?, &mut rng)?
                .values()
                .to_vec();
            let mut model = SensingModel::gaussian(m, n, &mut rng);
            if !algorithm.uses_thresholds() {
                model.thresholds = Vector::zeros(m);
            }
            Ok(Trial { x, model, sparsity })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut candidates: Vec<Baseline> = if algorithm.uses_sparsity() {
        grid.penalties
            .iter()
            .map(|&a| Baseline::new(algorithm, 0.0, a))
            .collect()
    } else {
        grid.step_sizes
            .iter()
            .flat_map(|&d| grid.penalties.iter().map(move |&a| Baseline::new(algorithm, d, a)))
            .collect()
    };
    candidates.sort_by(|a, b| {
        (a.step_size, a.penalty)
            .partial_cmp(&(b.step_size, b.penalty))
            .expect("finite grid")
    });

    let mut table = Vec::with_capacity(candidates.len());
    for c in candidates {
        let errors: Vec<f64> = trials
            .par_iter()
            .map(|t| trial_error(algorithm, c, t, iterations))
            .collect::<Result<_>>()?;
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let score = if mean.is_finite() { mean } else { f64::INFINITY };
        table.push(GridEntry {
            step_size: c.step_size,
            penalty: c.penalty,
            score,
        });
    }
    let best = table
        .iter()
        .fold(None::<&GridEntry>, |best, e| match best {
            Some(b) if b.score <= e.score => Some(b),
            _ => Some(e),
        })
        .expect("non-empty grid");
    Ok(GridResult {
        algorithm,
        baseline: Baseline {
            step_size: best.step_size,
            penalty: best.penalty,
        },
        score: best.score,
        table,
    })
}

fn trial_error(algorithm: ClassicAlgorithm, c: Baseline, t: &Trial, iterations: usize) -> Result<f64> {
    let mut cfg = SolverConfig::rfpi(c.step_size, c.penalty, iterations);
    if algorithm.uses_sparsity() {
        cfg = SolverConfig::biht(c.penalty, t.sparsity, iterations);
    }
    let meas = encode(&t.model, &t.x, EncodeMode::Exact)?;
    let estimate = match solve(algorithm, &t.model, &meas, &cfg).and_then(|traj| traj.final_estimate()) {
        Ok(est) => est,
        Err(Error::DegenerateIterate { .. }) => Vector::zeros(t.x.len()),
        Err(e) => return Err(e),
    };
    if !estimate.is_finite() {
        return Ok(f64::INFINITY);
    }
    if algorithm.uses_thresholds() {
        mse_amplitude(&t.x, &estimate)
    } else {
        direction_error(&t.x, &estimate)
    }
}
