use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DecoderParams, UnfoldedModel, Variant};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::signal_model::SensingModel;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Everything a checkpoint stores except its checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Payload {
    schema_version: u32,
    variant: Variant,
    n: usize,
    m: usize,
    #[serde(rename = "L")]
    layers: usize,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    sparsity: Option<usize>,
    t: f64,
    /// Row-major `m x n`.
    phi: Vec<f64>,
    thresholds: Vec<f64>,
    delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<Vec<Vec<f64>>>,
    rng_seed: u64,
}

/// Serialized parameters of a trained network. Floats are written in their
/// shortest round-trip form, so a save/load cycle is value-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    payload: Payload,
    /// Hex SHA-256 of the compact, key-sorted JSON of every other field.
    checksum: String,
}

impl Payload {
    /// Hash of the compact JSON with keys in sorted order.
    fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

impl Checkpoint {
    pub fn from_model(model: &UnfoldedModel, rng_seed: u64) -> Result<Checkpoint> {
        model.validate()?;
        let min = model.min_decoder_param();
        if min < 0.0 {
            log::warn!(
                "exporting {} with a negative decoder parameter ({min})",
                model.variant()
            );
        }
        let payload = Payload {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            variant: model.variant(),
            n: model.n(),
            m: model.m(),
            layers: model.layers(),
            sparsity: model.decoder.sparsity,
            t: model.encoder.smoothness,
            phi: model.encoder.phi.as_slice().to_vec(),
            thresholds: model.encoder.thresholds.to_vec(),
            delta: model.decoder.delta.clone(),
            tau: model
                .decoder
                .tau
                .as_ref()
                .map(|tau| tau.iter().map(|t| t.to_vec()).collect()),
            rng_seed,
        };
        let checksum = payload.digest()?;
        Ok(Checkpoint { payload, checksum })
    }

    pub fn variant(&self) -> Variant {
        self.payload.variant
    }

    pub fn n(&self) -> usize {
        self.payload.n
    }

    pub fn m(&self) -> usize {
        self.payload.m
    }

    pub fn layers(&self) -> usize {
        self.payload.layers
    }

    pub fn sparsity(&self) -> Option<usize> {
        self.payload.sparsity
    }

    pub fn rng_seed(&self) -> u64 {
        self.payload.rng_seed
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Recomputes the checksum and compares it with the stored one.
    pub fn verify(&self) -> Result<()> {
        if self.payload.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion(self.payload.schema_version));
        }
        let computed = self.payload.digest()?;
        if computed != self.checksum {
            return Err(Error::Checksum {
                stored: self.checksum.clone(),
                computed,
            });
        }
        Ok(())
    }

    pub fn to_model(&self) -> Result<UnfoldedModel> {
        self.verify()?;
        let p = &self.payload;
        let phi = Matrix::from_row_major(p.m, p.n, p.phi.clone())?;
        let encoder = SensingModel::new(phi, Vector::new(p.thresholds.clone()), p.t)?;
        let tau = p
            .tau
            .as_ref()
            .map(|tau| tau.iter().map(|t| Vector::new(t.clone())).collect());
        let decoder = DecoderParams::new(p.variant, p.delta.clone(), tau, p.sparsity)?;
        if decoder.layers() != p.layers {
            return Err(Error::DimensionMismatch {
                context: "checkpoint layers",
                expected: p.layers,
                actual: decoder.layers(),
            });
        }
        UnfoldedModel::new(encoder, decoder)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.verify()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

/// Selects which components of a model come from a trained checkpoint; the
/// rest are taken from a baseline model (random `Φ`, `b` and fixed `δ`, `τ`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMask {
    #[serde(default)]
    pub phi: bool,
    #[serde(default)]
    pub thresholds: bool,
    #[serde(default)]
    pub delta: bool,
    #[serde(default)]
    pub tau: bool,
}

impl ComponentMask {
    pub const NONE: ComponentMask = ComponentMask {
        phi: false,
        thresholds: false,
        delta: false,
        tau: false,
    };

    pub const ALL: ComponentMask = ComponentMask {
        phi: true,
        thresholds: true,
        delta: true,
        tau: true,
    };

    pub fn any(self) -> bool {
        self.phi || self.thresholds || self.delta || self.tau
    }

    pub fn uses_decoder(self) -> bool {
        self.delta || self.tau
    }

    /// Merges `learned` into `base` per the mask. Both models must share the
    /// variant family and dimensions.
    pub fn compose(self, learned: &UnfoldedModel, base: &UnfoldedModel) -> Result<UnfoldedModel> {
        if (learned.n(), learned.m(), learned.layers()) != (base.n(), base.m(), base.layers()) {
            return Err(Error::contract(format!(
                "checkpoint dims (n={}, m={}, L={}) differ from the experiment's (n={}, m={}, L={})",
                learned.n(),
                learned.m(),
                learned.layers(),
                base.n(),
                base.m(),
                base.layers()
            )));
        }
        let mut out = base.clone();
        if self.phi {
            out.encoder.phi = learned.encoder.phi.clone();
        }
        if self.thresholds {
            if !learned.variant().uses_thresholds() || !base.variant().uses_thresholds() {
                return Err(Error::contract("thresholds mask needs a generalized variant"));
            }
            out.encoder.thresholds = learned.encoder.thresholds.clone();
        }
        if self.delta {
            out.decoder.delta = learned.decoder.delta.clone();
        }
        if self.tau {
            match (&learned.decoder.tau, out.decoder.tau.is_some()) {
                (Some(tau), true) => out.decoder.tau = Some(tau.clone()),
                _ => return Err(Error::contract("tau mask needs RFPI-family models")),
            }
        }
        out.validate()?;
        Ok(out)
    }
}
