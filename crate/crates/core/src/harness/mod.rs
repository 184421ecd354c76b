//! Experiment presets, configuration schema, baseline grid search and the
//! deterministic CSV runner.

mod grid;
mod presets;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, RngStream};
use crate::signal_model::SignalSpec;
use crate::solvers::ClassicAlgorithm;
use crate::training::{self, LossConfig, TrainConfig, TrainOutcome};
use crate::unfolded::{initial_model, Checkpoint, ComponentMask, DecoderParams, UnfoldedModel, Variant};

pub use grid::{grid_search_baseline, GridEntry, GridResult};
pub use presets::{preset, PRESET_NAMES};
pub use run::{
    run_experiment, write_realization_csv, write_summary_csv, ExperimentSummary, RealizationRecord, RunRecord,
    SUMMARY_HEADER,
};

/// A classic solver or an unfolded network, named as in configs and CSVs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Classic(ClassicAlgorithm),
    Unfolded(Variant),
}

impl Algorithm {
    /// The unfolded variant of the same family; learned components are
    /// taken from a checkpoint of this variant.
    pub fn variant(self) -> Variant {
        match self {
            Algorithm::Classic(a) => Variant::from_classic(a),
            Algorithm::Unfolded(v) => v,
        }
    }

    pub fn classic(self) -> ClassicAlgorithm {
        self.variant().classic()
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Algorithm::Unfolded(_))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Classic(a) => f.write_str(a.name()),
            Algorithm::Unfolded(v) => f.write_str(v.name()),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(v) = s.parse::<Variant>() {
            return Ok(Algorithm::Unfolded(v));
        }
        s.parse::<ClassicAlgorithm>()
            .map(Algorithm::Classic)
            .map_err(|_| Error::contract(format!("unknown algorithm `{s}`")))
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

/// Every component a trained `variant` carries.
pub fn full_mask(variant: Variant) -> ComponentMask {
    ComponentMask {
        phi: true,
        thresholds: variant.uses_thresholds(),
        delta: true,
        tau: variant.is_rfpi_family(),
    }
}

/// One curve of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub id: String,
    pub algorithm: Algorithm,
    /// Components taken from the family's checkpoint; everything else is
    /// random (`Φ`, `b`) or the grid-searched constant (`δ`, `τ`). Defaults
    /// to nothing for classic algorithms and everything for learned ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<ComponentMask>,
}

impl CaseSpec {
    pub fn new(id: &str, algorithm: Algorithm) -> Self {
        CaseSpec {
            id: id.to_string(),
            algorithm,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: ComponentMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn effective_mask(&self) -> ComponentMask {
        match (self.mask, self.algorithm) {
            (Some(m), _) => m,
            (None, Algorithm::Unfolded(v)) => full_mask(v),
            (None, Algorithm::Classic(_)) => ComponentMask::NONE,
        }
    }

    fn validate(&self) -> Result<()> {
        let mask = self.effective_mask();
        let v = self.algorithm.variant();
        if mask.thresholds && !v.uses_thresholds() {
            return Err(Error::contract(format!(
                "case {}: {} has no thresholds to learn",
                self.id, self.algorithm
            )));
        }
        if mask.tau && !v.is_rfpi_family() {
            return Err(Error::contract(format!(
                "case {}: {} has no shrinkage vectors",
                self.id, self.algorithm
            )));
        }
        if self.id.is_empty() || self.id.contains(',') {
            return Err(Error::contract(format!(
                "case id `{}` must be non-empty without commas",
                self.id
            )));
        }
        Ok(())
    }
}

/// Fixed step size and penalty of a classic algorithm. For the BIHT family
/// `step_size = penalty / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub step_size: f64,
    pub penalty: f64,
}

impl Baseline {
    pub fn new(algorithm: ClassicAlgorithm, step_size: f64, penalty: f64) -> Self {
        if algorithm.uses_sparsity() {
            Baseline {
                step_size: penalty / 2.0,
                penalty,
            }
        } else {
            Baseline { step_size, penalty }
        }
    }
}

/// Candidate values and trial budget of the baseline grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Candidate δ (RFPI family only; the BIHT family uses δ = α/2).
    pub step_sizes: Vec<f64>,
    /// Candidate α.
    pub penalties: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        let decades =
            |lo: i32, hi: i32| -> Vec<f64> { (2 * lo..=2 * hi).map(|e| 10f64.powf(e as f64 / 2.0)).collect() };
        GridConfig {
            step_sizes: decades(-4, 0),
            penalties: decades(-3, 3),
            trials: 64,
            seed: 7,
        }
    }
}

/// Training hyperparameters shared by every variant of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    /// Sparsity levels drawn per training signal for the RFPI family.
    pub rfpi_pool: Vec<usize>,
    /// Single training sparsity level of the BIHT family.
    pub biht_sparsity: usize,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub eval_realizations: usize,
    pub lambda: f64,
}

impl TrainingPlan {
    pub fn pool(&self, variant: Variant) -> Vec<usize> {
        if variant.is_rfpi_family() {
            self.rfpi_pool.clone()
        } else {
            vec![self.biht_sparsity]
        }
    }

    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs_per_round: self.epochs_per_round,
            steps_per_epoch: self.steps_per_epoch,
            learning_rate: self.learning_rate,
            sparsity_pool: self.pool(variant),
            eval_realizations: self.eval_realizations,
            seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { lambda: self.lambda }
    }
}

fn default_realizations() -> usize {
    128
}

fn default_smoothness() -> f64 {
    50.0
}

/// Full description of one experiment; serialized as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `fig2`..`fig7`, their `-desk` versions, or `custom`.
    pub preset: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    /// Iterations reported per case, at most `L`; defaults to `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Evaluated sparsity levels.
    pub sparsity: Vec<usize>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    pub seed: u64,
    /// Smoothness of the training-time sign surrogate.
    #[serde(default = "default_smoothness")]
    pub t: f64,
    pub cases: Vec<CaseSpec>,
    /// Checkpoint file per learned variant.
    #[serde(default)]
    pub checkpoints: BTreeMap<Variant, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Fixed baseline parameters; missing entries are grid-searched.
    #[serde(default)]
    pub baselines: BTreeMap<ClassicAlgorithm, Baseline>,
    #[serde(default)]
    pub grid: GridConfig,
    pub training: TrainingPlan,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(self.layers)
    }

    /// Structural checks that need no files.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.layers == 0 {
            return Err(Error::contract("n, m and L must be positive"));
        }
        if self.iterations() > self.layers {
            return Err(Error::contract(format!(
                "iterations {} exceed L = {}",
                self.iterations(),
                self.layers
            )));
        }
        if self.realizations == 0 {
            return Err(Error::contract("realizations must be positive"));
        }
        if self.sparsity.is_empty() {
            return Err(Error::contract("no sparsity levels to evaluate"));
        }
        for &k in self
            .sparsity
            .iter()
            .chain(&self.training.rfpi_pool)
            .chain([&self.training.biht_sparsity])
        {
            SignalSpec::new(self.n, k)?;
        }
        if self.cases.is_empty() {
            return Err(Error::contract("no cases"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for case in &self.cases {
            case.validate()?;
            if !ids.insert(case.id.as_str()) {
                return Err(Error::contract(format!("duplicate case id `{}`", case.id)));
            }
        }
        if self.grid.penalties.is_empty() || self.grid.step_sizes.is_empty() || self.grid.trials == 0 {
            return Err(Error::contract("grid search needs candidates and trials"));
        }
        Ok(())
    }

    /// Variants whose checkpoints the cases read.
    pub fn required_checkpoints(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = self
            .cases
            .iter()
            .filter(|c| c.effective_mask().any())
            .map(|c| c.algorithm.variant())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Classic algorithms whose fixed parameters the cases (or training
    /// initialization) need.
    pub fn required_baselines(&self) -> Vec<ClassicAlgorithm> {
        let mut out: Vec<ClassicAlgorithm> = self
            .cases
            .iter()
            .filter(|c| {
                let mask = c.effective_mask();
                !mask.delta || (c.algorithm.variant().is_rfpi_family() && !mask.tau)
            })
            .map(|c| c.algorithm.classic())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// The stored baseline of `algorithm`, or a fresh grid search over the
    /// family's training sparsity levels.
    pub fn baseline(&self, algorithm: ClassicAlgorithm) -> Result<Baseline> {
        if let Some(b) = self.baselines.get(&algorithm) {
            return Ok(*b);
        }
        let pool = self.training.pool(Variant::from_classic(algorithm));
        let result = grid_search_baseline(algorithm, self.n, self.m, self.layers, &pool, &self.grid)?;
        log::info!(
            "grid-searched {algorithm}: δ = {}, α = {} (score {:.4e})",
            result.baseline.step_size,
            result.baseline.penalty,
            result.score
        );
        Ok(result.baseline)
    }

    /// Fills in every missing baseline the cases need.
    pub fn resolve_baselines(&mut self) -> Result<()> {
        for algorithm in self.required_baselines() {
            if !self.baselines.contains_key(&algorithm) {
                let b = self.baseline(algorithm)?;
                self.baselines.insert(algorithm, b);
            }
        }
        Ok(())
    }

    /// Loads every checkpoint the cases need and checks it against the
    /// experiment's dimensions.
    pub fn load_checkpoints(&self) -> Result<BTreeMap<Variant, UnfoldedModel>> {
        let mut out = BTreeMap::new();
        for variant in self.required_checkpoints() {
            let path = self
                .checkpoints
                .get(&variant)
                .ok_or_else(|| Error::MissingCheckpoint(variant.to_string()))?;
            let model = Checkpoint::load(path)?.to_model()?;
            if model.variant() != variant {
                return Err(Error::contract(format!(
                    "{} holds a {} checkpoint, expected {variant}",
                    path.display(),
                    model.variant()
                )));
            }
            if (model.n(), model.m(), model.layers()) != (self.n, self.m, self.layers) {
                return Err(Error::contract(format!(
                    "checkpoint {} has n={}, m={}, L={}; experiment has n={}, m={}, L={}",
                    path.display(),
                    model.n(),
                    model.m(),
                    model.layers(),
                    self.n,
                    self.m,
                    self.layers
                )));
            }
            out.insert(variant, model);
        }
        Ok(out)
    }

    /// A fresh network for `variant`: Gaussian `Φ` (and `b`) and decoder
    /// parameters at the classic baseline.
    pub fn initial_model(&self, variant: Variant, baseline: Baseline, seed: u64) -> Result<UnfoldedModel> {
        let k = (!variant.is_rfpi_family()).then_some(self.training.biht_sparsity);
        let dec = DecoderParams::constant(variant, self.layers, self.n, baseline.step_size, baseline.penalty, k)?;
        let mut rng = RngStream::new(seed).child("init");
        initial_model(variant, self.m, self.n, dec, self.t, &mut rng)
    }
}

/// Trains `variant` at the experiment's dimensions, starting from the
/// grid-searched classic baseline.
pub fn train_variant(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> Result<(Checkpoint, TrainOutcome)> {
    cfg.validate()?;
    let baseline = cfg.baseline(variant.classic())?;
    let model = cfg.initial_model(variant, baseline, seed)?;
    let outcome = training::train_incremental(
        model,
        &cfg.training.train_config(variant, seed),
        &cfg.training.loss_config(),
    )?;
    let checkpoint = Checkpoint::from_model(&outcome.model, seed)?;
    Ok((checkpoint, outcome))
}

/// Direction error that treats a zero estimate as the zero vector.
pub(crate) fn direction_error(x: &[f64], estimate: &[f64]) -> Result<f64> {
    match numerics::normalized(estimate) {
        Some(_) => crate::signal_model::mse_direction(x, estimate),
        None => {
            let xd = numerics::normalized(x).ok_or_else(|| Error::contract("zero source signal"))?;
            crate::signal_model::mse_amplitude(&xd, estimate)
        }
    }
}
