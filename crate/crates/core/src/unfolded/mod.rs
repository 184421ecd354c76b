//! Unfolded (learned) versions of the four recovery algorithms.
//!
//! Each network is an encoder `r = sign(Φx − b)` followed by `L` decoder
//! layers, one per solver iteration, with per-layer step sizes and (RFPI
//! family) per-layer shrinkage vectors. The layer equations are written once,
//! generically over [`ops::LayerOps`], and run either exactly ([`Mode::Eval`])
//! or on an autodiff tape with smooth signs ([`Mode::Train`]).

mod checkpoint;
pub(crate) mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamValues, Shape, Tape, Var};
use crate::error::{ensure_len, Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::signal_model::{encode, EncodeMode, Measurement, SensingModel};
use crate::solvers::ClassicAlgorithm;

pub use checkpoint::{Checkpoint, ComponentMask, CHECKPOINT_SCHEMA_VERSION};
use ops::{EvalOps, LayerOps, TapeOps};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "l_rfpi")]
    LRfpi,
    #[serde(rename = "l_biht")]
    LBiht,
    #[serde(rename = "lg_rfpi")]
    LgRfpi,
    #[serde(rename = "lg_biht")]
    LgBiht,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::LRfpi, Variant::LBiht, Variant::LgRfpi, Variant::LgBiht];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LRfpi => "l_rfpi",
            Variant::LBiht => "l_biht",
            Variant::LgRfpi => "lg_rfpi",
            Variant::LgBiht => "lg_biht",
        }
    }

    /// The classic algorithm this network unfolds.
    pub fn classic(self) -> ClassicAlgorithm {
        match self {
            Variant::LRfpi => ClassicAlgorithm::Rfpi,
            Variant::LBiht => ClassicAlgorithm::Biht,
            Variant::LgRfpi => ClassicAlgorithm::Grfpi,
            Variant::LgBiht => ClassicAlgorithm::Gbiht,
        }
    }

    pub fn from_classic(algorithm: ClassicAlgorithm) -> Variant {
        match algorithm {
            ClassicAlgorithm::Rfpi => Variant::LRfpi,
            ClassicAlgorithm::Biht => Variant::LBiht,
            ClassicAlgorithm::Grfpi => Variant::LgRfpi,
            ClassicAlgorithm::Gbiht => Variant::LgBiht,
        }
    }

    pub fn is_rfpi_family(self) -> bool {
        matches!(self, Variant::LRfpi | Variant::LgRfpi)
    }

    /// Whether the encoder carries learnable nonzero thresholds.
    pub fn uses_thresholds(self) -> bool {
        matches!(self, Variant::LgRfpi | Variant::LgBiht)
    }

    /// Zero-threshold variants recover only the direction and report
    /// unit-norm estimates.
    pub fn normalizes_output(self) -> bool {
        !self.uses_thresholds()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown variant `{s}`")))
    }
}

/// Decoder parameter count: `L(n + 1)` for the RFPI family, `L` for BIHT.
pub fn param_count(variant: Variant, layers: usize, n: usize) -> usize {
    if variant.is_rfpi_family() {
        layers * (n + 1)
    } else {
        layers
    }
}

/// Per-layer decoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub variant: Variant,
    pub delta: Vec<f64>,
    /// One shrinkage vector per layer, RFPI family only.
    pub tau: Option<Vec<Vector>>,
    /// Sparsity level K, BIHT family only.
    pub sparsity: Option<usize>,
}

impl DecoderParams {
    pub fn new(variant: Variant, delta: Vec<f64>, tau: Option<Vec<Vector>>, sparsity: Option<usize>) -> Result<Self> {
        let p = DecoderParams {
            variant,
            delta,
            tau,
            sparsity,
        };
        p.check_fields()?;
        Ok(p)
    }

    /// Constant parameters reproducing the classic algorithm: `δᵢ = δ`,
    /// `τᵢ = (δ/α)·1` for the RFPI family and `δᵢ = α/2` for BIHT.
    pub fn constant(
        variant: Variant,
        layers: usize,
        n: usize,
        step_size: f64,
        penalty: f64,
        sparsity: Option<usize>,
    ) -> Result<Self> {
        if variant.is_rfpi_family() {
            let tau = Vector::filled(n, step_size / penalty);
            DecoderParams::new(variant, vec![step_size; layers], Some(vec![tau; layers]), None)
        } else {
            DecoderParams::new(variant, vec![penalty / 2.0; layers], None, sparsity)
        }
    }

    pub fn layers(&self) -> usize {
        self.delta.len()
    }

    fn check_fields(&self) -> Result<()> {
        if self.delta.is_empty() {
            return Err(Error::contract("decoder needs at least one layer"));
        }
        match (self.variant.is_rfpi_family(), &self.tau, self.sparsity) {
            (true, Some(tau), None) => {
                if tau.len() != self.delta.len() {
                    return Err(Error::DimensionMismatch {
                        context: "tau layers",
                        expected: self.delta.len(),
                        actual: tau.len(),
                    });
                }
                Ok(())
            }
            (false, None, Some(k)) if k > 0 => Ok(()),
            _ => Err(Error::contract(format!(
                "{} takes {}",
                self.variant,
                if self.variant.is_rfpi_family() {
                    "shrinkage vectors and no sparsity level"
                } else {
                    "a positive sparsity level and no shrinkage vectors"
                }
            ))),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        self.check_fields()?;
        if let Some(tau) = &self.tau {
            for t in tau {
                ensure_len("tau", n, t.len())?;
            }
        }
        if let Some(k) = self.sparsity {
            if k > n {
                return Err(Error::contract(format!("sparsity {k} exceeds n = {n}")));
            }
        }
        Ok(())
    }
}

/// Encoder plus decoder of one unfolded network.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedModel {
    pub encoder: SensingModel,
    pub decoder: DecoderParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Smooth signs and straight-through top-k; differentiable.
    Train,
    /// Exact signs and hard thresholding.
    Eval,
}

/// Per-layer outputs of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// Encoder output `r`.
    pub bits: Vector,
    /// `z₀ = Φᵀr / ‖Φᵀr‖₂`.
    pub init: Vector,
    /// Raw layer outputs `z₁..z_L`.
    pub layers: Vec<Vector>,
    /// Reported estimates `x̂₀..x̂_{L−1}`: the layer outputs, projected onto
    /// the unit sphere for L-BIHT.
    pub estimates: Vec<Vector>,
}

impl PipelineOutput {
    pub fn final_estimate(&self) -> &Vector {
        self.estimates.last().expect("at least one layer")
    }

    /// Init point followed by every estimate; index `i` is the output after
    /// `i` iterations.
    pub fn readouts(&self) -> impl Iterator<Item = &Vector> {
        std::iter::once(&self.init).chain(self.estimates.iter())
    }
}

/// Handles to the quantities recorded by [`UnfoldedModel::record`].
#[derive(Clone, Debug)]
pub struct RecordedForward {
    pub bits: Var,
    pub init: Var,
    pub layers: Vec<Var>,
    pub estimates: Vec<Var>,
    pub delta: Vec<Var>,
    /// Empty for the BIHT family.
    pub tau: Vec<Var>,
}

struct Decoded<V> {
    init: V,
    layers: Vec<V>,
    estimates: Vec<V>,
}

/// Runs `layers` decoder layers. The arithmetic mirrors the solver steps
/// operation for operation so that exact evaluation reproduces them.
#[allow(clippy::too_many_arguments)]
fn decode<O: LayerOps>(
    ops: &mut O,
    variant: Variant,
    phi: &O::M,
    b: Option<&O::V>,
    r: &O::V,
    delta: &[O::S],
    tau: Option<&[O::V]>,
    sparsity: Option<usize>,
    layers: usize,
) -> Result<Decoded<O::V>> {
    let back = ops.matvec_t(phi, r)?;
    let init = ops.normalize(&back)?;
    let mut z = init.clone();
    let mut raw = Vec::with_capacity(layers);
    let mut estimates = Vec::with_capacity(layers);
    for i in 0..layers {
        let next = match variant {
            Variant::LRfpi | Variant::LgRfpi => {
                let tau_i = &tau.expect("checked by DecoderParams")[i];
                let y = ops.matvec(phi, &z)?;
                let y = match b {
                    Some(b) => ops.sub(&y, b)?,
                    None => y,
                };
                let c = ops.mul(r, &y)?;
                let nc = ops.neg(&c);
                let rho = ops.relu(&nc);
                let w = ops.mul(r, &rho)?;
                let g = ops.matvec_t(phi, &w)?;
                let d = ops.neg(&g);
                let step = ops.scale(&delta[i], &d)?;
                let t = if variant == Variant::LRfpi {
                    let p = ops.dot(&d, &z)?;
                    let q = ops.scalar_mul(&delta[i], &p)?;
                    let coef = ops.add_const(1.0, &q);
                    let cz = ops.scale(&coef, &z)?;
                    ops.sub(&cz, &step)?
                } else {
                    ops.sub(&z, &step)?
                };
                let s = ops.sign(&t)?;
                let a = ops.abs(&t);
                let a = ops.sub(&a, tau_i)?;
                let a = ops.relu(&a);
                let v = ops.mul(&s, &a)?;
                if variant == Variant::LRfpi {
                    ops.normalize(&v).map_err(|e| at_layer(e, i + 1))?
                } else {
                    v
                }
            }
            Variant::LBiht | Variant::LgBiht => {
                let y = ops.matvec(phi, &z)?;
                let y = match b {
                    Some(b) => ops.sub(&y, b)?,
                    None => y,
                };
                let s = ops.sign(&y)?;
                let res = ops.sub(r, &s)?;
                let g = ops.matvec_t(phi, &res)?;
                let step = ops.scale(&delta[i], &g)?;
                let v = ops.add(&z, &step)?;
                ops.hard_threshold(&v, sparsity.expect("checked by DecoderParams"))?
            }
        };
        let estimate = if variant == Variant::LBiht {
            ops.normalize(&next).map_err(|e| at_layer(e, i + 1))?
        } else {
            next.clone()
        };
        raw.push(next.clone());
        estimates.push(estimate);
        z = next;
    }
    Ok(Decoded {
        init,
        layers: raw,
        estimates,
    })
}

fn at_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::DegenerateIterate { trajectory, .. } => Error::DegenerateIterate {
            iteration: layer,
            trajectory,
        },
        other => other,
    }
}

impl UnfoldedModel {
    pub fn new(encoder: SensingModel, decoder: DecoderParams) -> Result<Self> {
        let model = UnfoldedModel { encoder, decoder };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.n())?;
        if !self.decoder.variant.uses_thresholds() && !self.encoder.has_zero_thresholds() {
            return Err(Error::contract(format!(
                "{} requires zero quantization thresholds",
                self.decoder.variant
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.decoder.variant
    }

    pub fn n(&self) -> usize {
        self.encoder.n()
    }

    pub fn m(&self) -> usize {
        self.encoder.m()
    }

    pub fn layers(&self) -> usize {
        self.decoder.layers()
    }

    /// Encodes `x` and decodes all layers.
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<PipelineOutput> {
        self.validate()?;
        ensure_len("forward", self.n(), x.len())?;
        match mode {
            Mode::Eval => {
                let meas = encode(&self.encoder, x, EncodeMode::Exact)?;
                self.decode_eval(&meas)
            }
            Mode::Train => {
                let mut tape = Tape::new();
                let rec = self.record(&mut tape, x, self.layers())?;
                let values = |vars: &[Var]| vars.iter().map(|v| Vector::from(tape.value(*v))).collect();
                Ok(PipelineOutput {
                    bits: Vector::from(tape.value(rec.bits)),
                    init: Vector::from(tape.value(rec.init)),
                    layers: values(&rec.layers),
                    estimates: values(&rec.estimates),
                })
            }
        }
    }

    /// Exact decoding of given measurements.
    pub fn decode_eval(&self, meas: &Measurement) -> Result<PipelineOutput> {
        ensure_len("measurement", self.m(), meas.bits.len())?;
        let b = self
            .decoder
            .variant
            .uses_thresholds()
            .then_some(&self.encoder.thresholds);
        let decoded = decode(
            &mut EvalOps,
            self.decoder.variant,
            &self.encoder.phi,
            b,
            &meas.bits,
            &self.decoder.delta,
            self.decoder.tau.as_deref(),
            self.decoder.sparsity,
            self.layers(),
        )?;
        Ok(PipelineOutput {
            bits: meas.bits.clone(),
            init: decoded.init,
            layers: decoded.layers,
            estimates: decoded.estimates,
        })
    }

    /// Records a train-mode forward pass over the first `active_layers`
    /// layers. Every trainable parameter is registered on the tape, including
    /// those of inactive layers, so their gradients come back as zeros.
    pub fn record(&self, tape: &mut Tape, x: &[f64], active_layers: usize) -> Result<RecordedForward> {
        ensure_len("record", self.n(), x.len())?;
        if active_layers == 0 || active_layers > self.layers() {
            return Err(Error::contract(format!(
                "active layers {active_layers} must lie in 1..={}",
                self.layers()
            )));
        }
        let (m, n) = (self.m(), self.n());
        let variant = self.decoder.variant;
        let phi = tape.param(ParamId::Phi, Shape::Matrix(m, n), self.encoder.phi.as_slice())?;
        let b = if variant.uses_thresholds() {
            Some(tape.param(ParamId::Thresholds, Shape::Vector(m), &self.encoder.thresholds)?)
        } else {
            None
        };
        let delta = self
            .decoder
            .delta
            .iter()
            .enumerate()
            .map(|(i, d)| tape.param(ParamId::Delta(i), Shape::Scalar, &[*d]))
            .collect::<Result<Vec<_>>>()?;
        let tau = match &self.decoder.tau {
            Some(tau) => Some(
                tau.iter()
                    .enumerate()
                    .map(|(i, t)| tape.param(ParamId::Tau(i), Shape::Vector(n), t))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };

        let xv = tape.vector(x);
        let pre = tape.mat_vec(phi, xv)?;
        let pre = match b {
            Some(b) => tape.sub(pre, b)?,
            None => pre,
        };
        let bits = tape.tanh_scaled(pre, self.encoder.smoothness)?;

        let mut ops = TapeOps {
            smoothness: self.encoder.smoothness,
            tape,
        };
        let decoded = decode(
            &mut ops,
            variant,
            &phi,
            b.as_ref(),
            &bits,
            &delta,
            tau.as_deref(),
            self.decoder.sparsity,
            active_layers,
        )?;
        Ok(RecordedForward {
            bits,
            init: decoded.init,
            layers: decoded.layers,
            estimates: decoded.estimates,
            delta,
            tau: tau.unwrap_or_default(),
        })
    }

    /// Identifiers of every trainable parameter, in a fixed order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::Phi];
        if self.decoder.variant.uses_thresholds() {
            ids.push(ParamId::Thresholds);
        }
        ids.extend((0..self.layers()).map(ParamId::Delta));
        if self.decoder.tau.is_some() {
            ids.extend((0..self.layers()).map(ParamId::Tau));
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        match id {
            ParamId::Phi => Some(self.encoder.phi.as_slice()),
            ParamId::Thresholds if self.decoder.variant.uses_thresholds() => Some(&self.encoder.thresholds),
            ParamId::Thresholds => None,
            ParamId::Delta(i) => self.decoder.delta.get(i).map(std::slice::from_ref),
            ParamId::Tau(i) => self.decoder.tau.as_ref()?.get(i).map(|t| t.as_slice()),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut [f64]> {
        match id {
            ParamId::Phi => Some(self.encoder.phi.as_mut_slice()),
            ParamId::Thresholds if self.decoder.variant.uses_thresholds() => Some(&mut self.encoder.thresholds),
            ParamId::Thresholds => None,
            ParamId::Delta(i) => self.decoder.delta.get_mut(i).map(std::slice::from_mut),
            ParamId::Tau(i) => self.decoder.tau.as_mut()?.get_mut(i).map(|t| &mut t[..]),
        }
    }

    pub fn param_values(&self) -> ParamValues {
        self.param_ids()
            .into_iter()
            .map(|id| (id, self.param(id).expect("listed id exists").to_vec()))
            .collect()
    }

    /// Copy of the model with the given parameters overwritten.
    pub fn with_param_values(&self, values: &ParamValues) -> Result<UnfoldedModel> {
        let mut out = self.clone();
        for (&id, v) in values {
            let slot = out
                .param_mut(id)
                .ok_or_else(|| Error::contract(format!("{} has no parameter {id}", self.decoder.variant)))?;
            if slot.len() != v.len() {
                return Err(Error::contract(format!(
                    "parameter {id}: expected {} values, got {}",
                    slot.len(),
                    v.len()
                )));
            }
            slot.copy_from_slice(v);
        }
        Ok(out)
    }

    /// Smallest step size or shrinkage entry; the loss penalty keeps this
    /// non-negative.
    pub fn min_decoder_param(&self) -> f64 {
        let d = self.decoder.delta.iter().copied().fold(f64::INFINITY, f64::min);
        let t = self
            .decoder
            .tau
            .iter()
            .flatten()
            .flat_map(|t| t.iter().copied())
            .fold(f64::INFINITY, f64::min);
        d.min(t)
    }
}

/// Builds a fresh model with `Φ` (and `b` for LG variants) drawn from N(0,1)
/// and constant decoder parameters.
pub fn initial_model(
    variant: Variant,
    m: usize,
    n: usize,
    decoder: DecoderParams,
    smoothness: f64,
    rng: &mut crate::numerics::RngStream,
) -> Result<UnfoldedModel> {
    if decoder.variant != variant {
        return Err(Error::contract("decoder variant does not match"));
    }
    let phi: Matrix = rng.gaussian_matrix(m, n);
    let thresholds = if variant.uses_thresholds() {
        rng.gaussian_vector(m)
    } else {
        Vector::zeros(m)
    };
    UnfoldedModel::new(SensingModel::new(phi, thresholds, smoothness)?, decoder)
}

#[cfg(test)]
mod tests;
