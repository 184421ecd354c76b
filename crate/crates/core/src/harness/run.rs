use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{direction_error, Baseline, CaseSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};
use crate::signal_model::{
    consistency_violations, encode, mse_amplitude, sample_signal, EncodeMode, SensingModel, SignalSpec,
};
use crate::solvers::ClassicAlgorithm;
use crate::unfolded::{DecoderParams, UnfoldedModel, Variant};

pub const SUMMARY_HEADER: &str = "case,iteration,mse_amplitude,mse_direction,violations,realizations";

/// Mean metrics of one case at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub iteration: usize,
    pub mse_amplitude: f64,
    pub mse_direction: f64,
    pub violations: f64,
    /// Realizations that entered the means.
    pub realizations: usize,
}

/// Metrics of one case, realization and iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub case: String,
    pub realization: usize,
    pub iteration: usize,
    pub mse_amplitude: f64,
    pub mse_direction: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary {
    /// Sorted by `(case, iteration)`.
    pub rows: Vec<RunRecord>,
    /// Failed (degenerate) runs per case label; cases without failures are
    /// absent.
    pub failures: BTreeMap<String, usize>,
    /// Every successful run, ordered by case label, realization, iteration.
    pub per_realization: Vec<RealizationRecord>,
    pub baselines: BTreeMap<ClassicAlgorithm, Baseline>,
}

impl ExperimentSummary {
    pub fn row(&self, case: &str, iteration: usize) -> Option<&RunRecord> {
        self.rows.iter().find(|r| r.case == case && r.iteration == iteration)
    }

    /// The last reported iteration of `case`.
    pub fn final_row(&self, case: &str) -> Option<&RunRecord> {
        self.rows.iter().filter(|r| r.case == case).max_by_key(|r| r.iteration)
    }
}

/// CSV label of a case evaluated at sparsity `k`.
pub fn case_label(id: &str, k: usize) -> String {
    format!("{id}-k{k}")
}

/// Shared random draws of one realization; every case sees the same signal
/// and, where it uses random components, the same `Φ` and `b`.
struct Draw {
    x: Vector,
    phi: Matrix,
    b: Vector,
}

type CaseMetrics = Vec<(f64, f64, usize)>;

fn build_model(
    case: &CaseSpec,
    cfg: &ExperimentConfig,
    draw: &Draw,
    k: usize,
    learned: &BTreeMap<Variant, UnfoldedModel>,
) -> Result<UnfoldedModel> {
    let variant = case.algorithm.variant();
    let mask = case.effective_mask();
    let thresholds = if variant.uses_thresholds() {
        draw.b.clone()
    } else {
        Vector::zeros(cfg.m)
    };
    let encoder = SensingModel::new(draw.phi.clone(), thresholds, cfg.t)?;
    let decoder = match cfg.baselines.get(&variant.classic()) {
        Some(b) => DecoderParams::constant(
            variant,
            cfg.layers,
            cfg.n,
            b.step_size,
            b.penalty,
            (!variant.is_rfpi_family()).then_some(k),
        )?,
        None => {
            // Every decoder component comes from the checkpoint.
            let source = learned
                .get(&variant)
                .ok_or_else(|| Error::MissingCheckpoint(variant.to_string()))?;
            source.decoder.clone()
        }
    };
    let base = UnfoldedModel::new(encoder, decoder)?;
    let mut model = if mask.any() {
        let source = learned
            .get(&variant)
            .ok_or_else(|| Error::MissingCheckpoint(variant.to_string()))?;
        mask.compose(source, &base)?
    } else {
        base
    };
    if !variant.is_rfpi_family() {
        model.decoder.sparsity = Some(k);
    }
    Ok(model)
}

fn run_case(model: &UnfoldedModel, x: &[f64], iterations: usize) -> Result<Option<CaseMetrics>> {
    let meas = encode(&model.encoder, x, EncodeMode::Exact)?;
    let out = match model.decode_eval(&meas) {
        Ok(out) => out,
        Err(Error::DegenerateIterate { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    out.readouts()
        .take(iterations + 1)
        .map(|est| {
            if !est.is_finite() {
                return Ok(None);
            }
            Ok(Some((
                mse_amplitude(x, est)?,
                direction_error(x, est)?,
                consistency_violations(&meas, &model.encoder, est)?,
            )))
        })
        .collect::<Result<Option<Vec<_>>>>()
}

/// Runs every case of `cfg` on `realizations` seeded instances per sparsity
/// level and averages the per-iteration metrics. Missing baselines are grid
/// searched first. Runs that degenerate or overflow are excluded from the
/// means and counted in [`ExperimentSummary::failures`]. If `cfg.output` is
/// set the summary CSV is written there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let learned = cfg.load_checkpoints()?;
    let mut cfg = cfg.clone();
    cfg.resolve_baselines()?;
    let iterations = cfg.iterations();
    let root = RngStream::new(cfg.seed);

    let mut summary = ExperimentSummary {
        rows: Vec::new(),
        failures: BTreeMap::new(),
        per_realization: Vec::new(),
        baselines: cfg.baselines.clone(),
    };
    for &k in &cfg.sparsity {
        let spec = SignalSpec::new(cfg.n, k)?;
        // results[r][case]
        let results: Vec<Vec<Option<CaseMetrics>>> = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| {
                let rng = root.child(&format!("k{k}/realization{r}"));
                let draw = Draw {
                    x: sample_signal(spec, &mut rng.child("signal"))?.values().clone(),
                    phi: rng.child("phi").gaussian_matrix(cfg.m, cfg.n),
                    b: rng.child("b").gaussian_vector(cfg.m),
                };
                cfg.cases
                    .iter()
                    .map(|case| {
                        let model = build_model(case, &cfg, &draw, k, &learned)?;
                        run_case(&model, &draw.x, iterations)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        for (c, case) in cfg.cases.iter().enumerate() {
            let label = case_label(&case.id, k);
            let mut sums = vec![(0.0, 0.0, 0.0); iterations + 1];
            let mut count = 0;
            for (r, per_case) in results.iter().enumerate() {
                let Some(metrics) = &per_case[c] else {
                    *summary.failures.entry(label.clone()).or_default() += 1;
                    continue;
                };
                count += 1;
                for (i, &(amp, dir, viol)) in metrics.iter().enumerate() {
                    sums[i].0 += amp;
                    sums[i].1 += dir;
                    sums[i].2 += viol as f64;
                    summary.per_realization.push(RealizationRecord {
                        case: label.clone(),
                        realization: r,
                        iteration: i,
                        mse_amplitude: amp,
                        mse_direction: dir,
                        violations: viol,
                    });
                }
            }
            let denom = if count == 0 { f64::NAN } else { count as f64 };
            for (i, s) in sums.into_iter().enumerate() {
                summary.rows.push(RunRecord {
                    case: label.clone(),
                    iteration: i,
                    mse_amplitude: s.0 / denom,
                    mse_direction: s.1 / denom,
                    violations: s.2 / denom,
                    realizations: count,
                });
            }
        }
    }
    summary
        .rows
        .sort_by(|a, b| (&a.case, a.iteration).cmp(&(&b.case, b.iteration)));
    summary
        .per_realization
        .sort_by(|a, b| (&a.case, a.realization, a.iteration).cmp(&(&b.case, b.realization, b.iteration)));
    for (label, count) in &summary.failures {
        log::warn!("{label}: {count} failed runs excluded from the means");
    }
    if let Some(path) = &cfg.output {
        write_summary_csv(path, &summary.rows)?;
    }
    Ok(summary)
}

pub fn write_summary_csv(path: &Path, rows: &[RunRecord]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_realization_csv(path: &Path, rows: &[RealizationRecord]) -> Result<()> {
    write_rows(path, rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
