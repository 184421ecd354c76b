use std::collections::BTreeMap;

use super::{Algorithm, CaseSpec, ExperimentConfig, GridConfig, TrainingPlan};
use crate::error::{Error, Result};
use crate::solvers::ClassicAlgorithm::{Biht, Gbiht, Grfpi, Rfpi};
use crate::unfolded::ComponentMask;
use crate::unfolded::Variant::{LBiht, LRfpi, LgBiht, LgRfpi};

pub const PRESET_NAMES: [&str; 12] = [
    "fig2",
    "fig3",
    "fig4",
    "fig5",
    "fig6",
    "fig7",
    "fig2-desk",
    "fig3-desk",
    "fig4-desk",
    "fig5-desk",
    "fig6-desk",
    "fig7-desk",
];

const PHI: ComponentMask = ComponentMask {
    phi: true,
    thresholds: false,
    delta: false,
    tau: false,
};

const PHI_B: ComponentMask = ComponentMask {
    phi: true,
    thresholds: true,
    delta: false,
    tau: false,
};

const TAU: ComponentMask = ComponentMask {
    phi: false,
    thresholds: false,
    delta: false,
    tau: true,
};

const DELTA: ComponentMask = ComponentMask {
    phi: false,
    thresholds: false,
    delta: true,
    tau: false,
};

fn classic(id: &str, a: crate::solvers::ClassicAlgorithm) -> CaseSpec {
    CaseSpec::new(id, Algorithm::Classic(a))
}

fn learned(id: &str, v: crate::unfolded::Variant) -> CaseSpec {
    CaseSpec::new(id, Algorithm::Unfolded(v))
}

/// The figure's cases and evaluated sparsity levels at full scale.
fn figure(name: &str) -> Option<(Vec<CaseSpec>, Vec<usize>)> {
    let cases = match name {
        "fig2" => vec![
            classic("case1_rfpi", Rfpi),
            classic("case2_rfpi_learned_phi", Rfpi).with_mask(PHI),
            classic("case3_rfpi_learned_tau", Rfpi).with_mask(TAU),
            learned("case4_l_rfpi", LRfpi),
        ],
        "fig3" => vec![
            classic("case1_grfpi", Grfpi),
            classic("case2_grfpi_learned_phi_b", Grfpi).with_mask(PHI_B),
            learned("case3_lg_rfpi", LgRfpi),
        ],
        "fig4" => vec![
            learned("lg_rfpi", LgRfpi),
            classic("grfpi", Grfpi),
            learned("l_rfpi", LRfpi),
            classic("rfpi", Rfpi),
        ],
        "fig5" => vec![
            classic("case1_biht", Biht),
            classic("case2_biht_learned_delta", Biht).with_mask(DELTA),
            classic("case3_biht_learned_phi", Biht).with_mask(PHI),
            learned("case4_l_biht", LBiht),
            classic("rfpi", Rfpi),
        ],
        "fig6" => vec![
            classic("case1_gbiht", Gbiht),
            classic("case2_gbiht_learned_phi_b", Gbiht).with_mask(PHI_B),
            learned("case3_lg_biht", LgBiht),
            learned("lg_rfpi", LgRfpi),
            classic("grfpi", Grfpi),
        ],
        "fig7" => vec![
            classic("gbiht", Gbiht),
            learned("lg_biht", LgBiht),
            learned("lg_rfpi", LgRfpi),
            learned("l_rfpi", LRfpi),
            learned("l_biht", LBiht),
        ],
        _ => return None,
    };
    let sparsity = match name {
        "fig2" | "fig3" => vec![8, 16, 32, 40],
        "fig4" => vec![24],
        _ => vec![16, 24],
    };
    Some((cases, sparsity))
}

/// Builds a named preset. Full-scale presets use the published dimensions
/// (n = 128, m = 512, L = 30); `-desk` versions divide n, m and every
/// sparsity level by four and use L = 10 with 64 realizations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (base, desk) = match name.strip_suffix("-desk") {
        Some(base) => (base, true),
        None => (name, false),
    };
    let (cases, sparsity) = figure(base).ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    let scale = |k: usize| if desk { k / 4 } else { k };
    let (n, m, layers, realizations) = if desk { (32, 128, 10, 64) } else { (128, 512, 30, 128) };
    Ok(ExperimentConfig {
        preset: name.to_string(),
        n,
        m,
        layers,
        iterations: None,
        sparsity: sparsity.into_iter().map(scale).collect(),
        realizations,
        seed: 2024,
        t: 50.0,
        cases,
        checkpoints: BTreeMap::new(),
        output: None,
        baselines: BTreeMap::new(),
        grid: GridConfig::default(),
        training: TrainingPlan {
            rfpi_pool: [16, 24, 32].into_iter().map(scale).collect(),
            biht_sparsity: scale(16),
            batch_size: 64,
            epochs_per_round: 200,
            steps_per_epoch: 32,
            learning_rate: 1e-3,
            eval_realizations: 128,
            lambda: 1.0,
        },
    })
}
