//! Accumulated per-layer loss, Adam, and the incremental layer-by-layer
//! training schedule.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradSet, ParamId, ParamValues, Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{self, RngStream};
use crate::signal_model::{mse_amplitude, sample_signal, SignalSpec, SparseSignal};
use crate::unfolded::{Mode, UnfoldedModel};

/// Loss above which a round is aborted as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the non-negativity penalties on δ and τ.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1.0 }
    }
}

impl LossConfig {
    /// Importance weight `ln(i + 2)` of layer `i`.
    pub fn weight(i: usize) -> f64 {
        ((i + 2) as f64).ln()
    }

    pub fn weights(layers: usize) -> Vec<f64> {
        (0..layers).map(LossConfig::weight).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "penalty weight λ must be positive, got {}",
                self.lambda
            )))
        }
    }
}

/// The vector the layer estimates are compared against: the signal itself,
/// or its direction for the zero-threshold variants whose estimates are
/// unit-norm.
pub fn loss_target(model: &UnfoldedModel, x: &[f64]) -> Result<Vec<f64>> {
    if model.variant().normalizes_output() {
        numerics::normalized(x)
            .map(|v| v.into_inner())
            .ok_or_else(|| Error::contract("training signal is zero"))
    } else {
        Ok(x.to_vec())
    }
}

/// Records `G_l = Σ_{i<active} wᵢ‖target − x̂ᵢ‖² + λΣReLU(−δᵢ) + λΣReLU(−τᵢ)`
/// for one signal. The τ term is absent for the BIHT family.
pub fn record_loss(
    tape: &mut Tape,
    model: &UnfoldedModel,
    x: &[f64],
    active_layers: usize,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let target_values = loss_target(model, x)?;
    let rec = model.record(tape, x, active_layers)?;
    let target = tape.vector(&target_values);
    let mut total = tape.scalar(0.0);
    for (i, est) in rec.estimates.iter().enumerate() {
        let diff = tape.sub(target, *est)?;
        let sq = tape.reduce_sum_sq(diff);
        let term = tape.scale_const(LossConfig::weight(i), sq);
        total = tape.add(total, term)?;
    }
    for d in &rec.delta[..active_layers] {
        let neg = tape.neg(*d);
        let pen = tape.relu(neg);
        let pen = tape.scale_const(cfg.lambda, pen);
        total = tape.add(total, pen)?;
    }
    for t in rec.tau.iter().take(active_layers) {
        let neg = tape.neg(*t);
        let pen = tape.relu(neg);
        let pen = tape.sum(pen);
        let pen = tape.scale_const(cfg.lambda, pen);
        total = tape.add(total, pen)?;
    }
    Ok(total)
}

/// Loss value and parameter gradients for one signal.
pub fn loss_and_grad(
    model: &UnfoldedModel,
    x: &[f64],
    active_layers: usize,
    cfg: &LossConfig,
) -> Result<(f64, GradSet)> {
    let mut tape = Tape::new();
    let loss = record_loss(&mut tape, model, x, active_layers, cfg)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar_value(loss), grads))
}

/// Mean loss and mean gradient over a batch. Per-sample work runs in
/// parallel; results are merged in sample order so the outcome does not
/// depend on the number of workers. Samples whose forward pass degenerates
/// are skipped; the count of used samples is returned.
pub fn batch_loss_and_grad(
    model: &UnfoldedModel,
    batch: &[SparseSignal],
    active_layers: usize,
    cfg: &LossConfig,
) -> Result<(f64, GradSet, usize)> {
    let results: Vec<Result<(f64, GradSet)>> = batch
        .par_iter()
        .map(|x| loss_and_grad(model, x.values(), active_layers, cfg))
        .collect();
    let mut total = 0.0;
    let mut grads = GradSet::default();
    let mut used = 0;
    for r in results {
        match r {
            Ok((loss, g)) => {
                total += loss;
                grads.merge(&g)?;
                used += 1;
            }
            Err(Error::DegenerateIterate { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateIterate {
            iteration: 0,
            trajectory: Vec::new(),
        });
    }
    grads.scale(1.0 / used as f64);
    Ok((total / used as f64, grads, used))
}

/// Mutable access to named parameters.
pub trait ParamStore {
    fn param_slice_mut(&mut self, id: ParamId) -> Option<&mut [f64]>;
}

impl ParamStore for UnfoldedModel {
    fn param_slice_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        self.param_mut(id)
    }
}

impl ParamStore for ParamValues {
    fn param_slice_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        self.get_mut(&id).map(|v| v.as_mut_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam step `p ← p − lr·m̂/(√v̂ + ε)` on every parameter
/// present in `grads`.
pub fn adam_update<P: ParamStore>(params: &mut P, grads: &GradSet, state: &mut AdamState, lr: f64) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (id, g) in grads.iter() {
        let p = params
            .param_slice_mut(id)
            .ok_or_else(|| Error::contract(format!("no parameter {id} to update")))?;
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "adam_update",
                expected: p.len(),
                actual: g.len(),
            });
        }
        let m = state.first.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.second.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        if m.len() != g.len() {
            return Err(Error::contract(format!("optimizer state shape changed for {id}")));
        }
        for j in 0..g.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    /// Sparsity levels drawn uniformly per training signal.
    pub sparsity_pool: Vec<usize>,
    /// Held-out signals used for the per-epoch evaluation.
    pub eval_realizations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs_per_round: 200,
            steps_per_epoch: 32,
            learning_rate: 1e-3,
            sparsity_pool: vec![16, 24, 32],
            eval_realizations: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0
            || self.epochs_per_round == 0
            || self.steps_per_epoch == 0
            || self.eval_realizations == 0
        {
            return Err(Error::contract("training sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.sparsity_pool.is_empty() {
            return Err(Error::contract("sparsity pool is empty"));
        }
        for &k in &self.sparsity_pool {
            SignalSpec::new(n, k)?;
        }
        Ok(())
    }
}

/// `count` fresh signals, each with a sparsity level drawn uniformly from
/// `pool`.
pub fn sample_batch(n: usize, pool: &[usize], count: usize, rng: &mut RngStream) -> Result<Vec<SparseSignal>> {
    if pool.is_empty() {
        return Err(Error::contract("sparsity pool is empty"));
    }
    (0..count)
        .map(|_| {
            let k = pool[rng.uniform_index(pool.len())];
            sample_signal(SignalSpec::new(n, k)?, rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub epoch: usize,
    /// Optimizer steps taken in this round so far.
    pub step: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub eval_mse_amplitude: f64,
    pub eval_mse_direction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: UnfoldedModel,
    pub log: Vec<LogRow>,
    /// Training samples dropped because their forward pass degenerated.
    pub skipped_samples: usize,
}

/// Mean amplitude and direction MSE of the network truncated to
/// `active_layers` layers, evaluated exactly. Degenerate runs are excluded.
pub fn evaluate(model: &UnfoldedModel, signals: &[SparseSignal], active_layers: usize) -> Result<(f64, f64)> {
    let results: Vec<Option<(f64, f64)>> = signals
        .par_iter()
        .map(|x| -> Result<Option<(f64, f64)>> {
            let out = match model.forward(x.values(), Mode::Eval) {
                Ok(out) => out,
                Err(Error::DegenerateIterate { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let est = &out.estimates[active_layers - 1];
            let amp = mse_amplitude(x.values(), est)?;
            let dir = crate::harness::direction_error(x.values(), est)?;
            Ok(Some((amp, dir)))
        })
        .collect::<Result<_>>()?;
    let ok: Vec<(f64, f64)> = results.into_iter().flatten().collect();
    if ok.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let count = ok.len() as f64;
    let amp = ok.iter().map(|r| r.0).sum::<f64>() / count;
    let dir = ok.iter().map(|r| r.1).sum::<f64>() / count;
    Ok((amp, dir))
}

/// Incremental training: round `l` optimizes `G_l` over the encoder and the
/// first `l + 1` layers, starting from the previous round's parameters with
/// fresh Adam moments.
pub fn train_incremental(initial: UnfoldedModel, cfg: &TrainConfig, loss_cfg: &LossConfig) -> Result<TrainOutcome> {
    initial.validate()?;
    cfg.validate(initial.n())?;
    loss_cfg.validate()?;
    let n = initial.n();
    let root = RngStream::new(cfg.seed);
    let mut eval_rng = root.child("eval");
    let eval_set = sample_batch(n, &cfg.sparsity_pool, cfg.eval_realizations, &mut eval_rng)?;
    let mut train_rng = root.child("train");

    let mut model = initial;
    let mut log = Vec::new();
    let mut skipped = 0;
    for round in 0..model.layers() {
        let active = round + 1;
        let mut adam = AdamState::default();
        let mut step = 0;
        for epoch in 0..cfg.epochs_per_round {
            let mut epoch_loss = 0.0;
            for _ in 0..cfg.steps_per_epoch {
                let batch = sample_batch(n, &cfg.sparsity_pool, cfg.batch_size, &mut train_rng)?;
                let (loss, grads, used) = batch_loss_and_grad(&model, &batch, active, loss_cfg)?;
                skipped += batch.len() - used;
                if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence { round, step, loss });
                }
                adam_update(&mut model, &grads, &mut adam, cfg.learning_rate)?;
                epoch_loss += loss;
                step += 1;
            }
            let (amp, dir) = evaluate(&model, &eval_set, active)?;
            let row = LogRow {
                round,
                epoch,
                step,
                loss: epoch_loss / cfg.steps_per_epoch as f64,
                eval_mse_amplitude: amp,
                eval_mse_direction: dir,
            };
            log::debug!(
                "round {round} epoch {epoch}: loss {:.6e}, eval amplitude {amp:.4e}, direction {dir:.4e}",
                row.loss
            );
            log.push(row);
        }
        if let Some(last) = log.last() {
            log::info!(
                "round {round}/{}: loss {:.4e}, eval direction MSE {:.4e}",
                model.layers(),
                last.loss,
                last.eval_mse_direction
            );
        }
    }
    let min = model.min_decoder_param();
    if min < -1e-6 {
        log::warn!("training finished with a negative step size or threshold ({min})");
    }
    if skipped > 0 {
        log::warn!("{skipped} training samples skipped after degenerate forward passes");
    }
    Ok(TrainOutcome {
        model,
        log,
        skipped_samples: skipped,
    })
}

pub fn write_training_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
