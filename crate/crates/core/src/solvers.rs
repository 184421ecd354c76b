//! The classic fixed-parameter recovery algorithms.
//!
//! RFPI and BIHT assume zero quantization thresholds and recover only the
//! direction of the source. Their generalized forms (G-RFPI, G-BIHT) compare
//! against arbitrary thresholds and keep the amplitude. The unfolded networks
//! in [`crate::unfolded`] must reproduce these iterates exactly when their
//! per-layer parameters are held constant.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::signal_model::{EncodeMode, Measurement, SensingModel};

/// Sign-preserving shrinkage `sign(t)·max(|t| − τ, 0)`.
pub fn soft_shrink(t: &[f64], tau: &[f64]) -> Result<Vector> {
    ensure_len("soft_shrink", t.len(), tau.len())?;
    if let Some(bad) = tau.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::contract(format!("shrinkage threshold {bad} is negative")));
    }
    Ok(t.iter().zip(tau).map(|(&ti, &ci)| shrink_scalar(ti, ci)).collect())
}

#[inline]
fn shrink_scalar(t: f64, tau: f64) -> f64 {
    numerics::sign_scalar(t) * (t.abs() - tau).max(0.0)
}

/// Keeps the `k` largest-magnitude entries and zeroes the rest. Ties are
/// broken toward the smaller index.
pub fn hard_threshold(u: &[f64], k: usize) -> Result<Vector> {
    if k == 0 || k > u.len() {
        return Err(Error::contract(format!("sparsity {k} must lie in 1..={}", u.len())));
    }
    let mut out = Vector::zeros(u.len());
    for i in numerics::top_k_indices(u, k) {
        out[i] = u[i];
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicAlgorithm {
    Rfpi,
    Biht,
    Grfpi,
    Gbiht,
}

impl ClassicAlgorithm {
    pub const ALL: [ClassicAlgorithm; 4] = [
        ClassicAlgorithm::Rfpi,
        ClassicAlgorithm::Biht,
        ClassicAlgorithm::Grfpi,
        ClassicAlgorithm::Gbiht,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassicAlgorithm::Rfpi => "rfpi",
            ClassicAlgorithm::Biht => "biht",
            ClassicAlgorithm::Grfpi => "grfpi",
            ClassicAlgorithm::Gbiht => "gbiht",
        }
    }

    /// BIHT-family solvers take a sparsity level and hard-threshold.
    pub fn uses_sparsity(self) -> bool {
        matches!(self, ClassicAlgorithm::Biht | ClassicAlgorithm::Gbiht)
    }

    /// Generalized algorithms use nonzero thresholds and recover amplitude.
    pub fn uses_thresholds(self) -> bool {
        matches!(self, ClassicAlgorithm::Grfpi | ClassicAlgorithm::Gbiht)
    }
}

impl std::fmt::Display for ClassicAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassicAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassicAlgorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Init {
    /// `Φᵀr / ‖Φᵀr‖₂`.
    #[default]
    NormalizedBackprojection,
    Zero,
    Given(Vector),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Gradient step δ (RFPI family).
    pub step_size: f64,
    /// Penalty α; RFPI shrinks by δ/α, BIHT steps by α/2.
    pub penalty: f64,
    pub iterations: usize,
    /// Sparsity level K, BIHT family only.
    pub sparsity: Option<usize>,
    pub init: Init,
}

impl SolverConfig {
    pub fn rfpi(step_size: f64, penalty: f64, iterations: usize) -> Self {
        SolverConfig {
            step_size,
            penalty,
            iterations,
            sparsity: None,
            init: Init::default(),
        }
    }

    pub fn biht(penalty: f64, sparsity: usize, iterations: usize) -> Self {
        SolverConfig {
            step_size: penalty / 2.0,
            penalty,
            iterations,
            sparsity: Some(sparsity),
            init: Init::default(),
        }
    }

    fn validate(&self, algorithm: ClassicAlgorithm) -> Result<()> {
        if !(self.penalty > 0.0) {
            return Err(Error::contract("penalty α must be positive"));
        }
        if algorithm.uses_sparsity() {
            if self.sparsity.is_none() {
                return Err(Error::contract(format!("{algorithm} needs a sparsity level")));
            }
        } else {
            if self.sparsity.is_some() {
                return Err(Error::contract(format!("{algorithm} takes no sparsity level")));
            }
            if !(self.step_size > 0.0) {
                return Err(Error::contract("step size δ must be positive"));
            }
        }
        Ok(())
    }
}

/// Iterates `x₀..x_L` of one solver run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub iterates: Vec<Vector>,
    /// Whether readouts are projected onto the unit sphere (plain BIHT).
    pub normalize_readout: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    /// The estimate reported after iteration `i`.
    pub fn readout(&self, i: usize) -> Result<Vector> {
        let x = &self.iterates[i];
        if self.normalize_readout {
            numerics::normalized(x).ok_or(Error::DegenerateIterate {
                iteration: i,
                trajectory: self.iterates.clone(),
            })
        } else {
            Ok(x.clone())
        }
    }

    /// The solver output: the last iterate, renormalized for plain BIHT.
    pub fn final_estimate(&self) -> Result<Vector> {
        self.readout(self.iterates.len() - 1)
    }
}

fn require_zero_thresholds(model: &SensingModel, algorithm: &str) -> Result<()> {
    if model.has_zero_thresholds() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "{algorithm} requires zero quantization thresholds"
        )))
    }
}

fn check_measurement(model: &SensingModel, meas: &Measurement) -> Result<()> {
    ensure_len("measurement", model.m(), meas.bits.len())
}

/// `RΦ` with `R = Diag(r)`.
fn row_signed(phi: &Matrix, r: &[f64]) -> Matrix {
    let cols = phi.cols();
    let data = phi
        .as_slice()
        .chunks(cols)
        .zip(r)
        .flat_map(|(row, &ri)| row.iter().map(move |v| ri * v))
        .collect();
    Matrix::from_row_major(phi.rows(), cols, data).expect("shape preserved")
}

/// RFPI descent direction `d = −(RΦ)ᵀ ρ(RΦx)` with `ρ(c) = max(−c, 0)`.
pub fn rfpi_gradient(model: &SensingModel, meas: &Measurement, x: &[f64]) -> Result<Vector> {
    check_measurement(model, meas)?;
    let rphi = row_signed(&model.phi, &meas.bits);
    let c = numerics::matvec(&rphi, x)?;
    let rho: Vector = c.iter().map(|&ci| (-ci).max(0.0)).collect();
    let g = numerics::matvec_t(&rphi, &rho)?;
    Ok(g.iter().map(|v| -v).collect())
}

/// Generalized direction `d̃ = −(RΦ)ᵀ ρ(R(Φx − b))`.
pub fn consistency_gradient(model: &SensingModel, meas: &Measurement, x: &[f64]) -> Result<Vector> {
    check_measurement(model, meas)?;
    let y = model.pre_activation(x)?;
    let weighted: Vector = y
        .iter()
        .zip(meas.bits.iter())
        .map(|(&yi, &ri)| ri * (-(ri * yi)).max(0.0))
        .collect();
    let g = numerics::matvec_t(&model.phi, &weighted)?;
    Ok(g.iter().map(|v| -v).collect())
}

/// One RFPI iteration: descend, shrink by `δ/α`, project onto the sphere.
pub fn rfpi_step(
    x_prev: &[f64],
    model: &SensingModel,
    meas: &Measurement,
    step_size: f64,
    penalty: f64,
) -> Result<Vector> {
    require_zero_thresholds(model, "RFPI")?;
    let norm = numerics::norm2(x_prev);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("RFPI iterate must be unit-norm, got {norm}")));
    }
    let d = rfpi_gradient(model, meas, x_prev)?;
    let coef = 1.0 + step_size * numerics::dot(&d, x_prev);
    let t: Vec<f64> = x_prev
        .iter()
        .zip(d.iter())
        .map(|(&xi, &di)| coef * xi - step_size * di)
        .collect();
    let tau = step_size / penalty;
    let v: Vec<f64> = t.iter().map(|&ti| shrink_scalar(ti, tau)).collect();
    numerics::normalized(&v).ok_or(Error::DegenerateIterate {
        iteration: 0,
        trajectory: Vec::new(),
    })
}

/// One G-RFPI iteration: descend on the thresholded consistency penalty and
/// shrink, without sphere projection.
pub fn grfpi_step(
    x_prev: &[f64],
    model: &SensingModel,
    meas: &Measurement,
    step_size: f64,
    penalty: f64,
) -> Result<Vector> {
    let d = consistency_gradient(model, meas, x_prev)?;
    let tau = step_size / penalty;
    Ok(x_prev
        .iter()
        .zip(d.iter())
        .map(|(&xi, &di)| shrink_scalar(xi - step_size * di, tau))
        .collect())
}

fn biht_like_step(
    x_prev: &[f64],
    model: &SensingModel,
    meas: &Measurement,
    penalty: f64,
    sparsity: usize,
) -> Result<Vector> {
    check_measurement(model, meas)?;
    let s = numerics::exact_sign(&model.pre_activation(x_prev)?);
    let residual: Vec<f64> = meas.bits.iter().zip(s.iter()).map(|(r, s)| r - s).collect();
    let g = numerics::matvec_t(&model.phi, &residual)?;
    let step = penalty / 2.0;
    let u: Vec<f64> = x_prev.iter().zip(g.iter()).map(|(&xi, &gi)| xi + step * gi).collect();
    hard_threshold(&u, sparsity)
}

/// One BIHT iteration `H_K(x + (α/2)Φᵀ(r − sign(Φx)))`.
pub fn biht_step(
    x_prev: &[f64],
    model: &SensingModel,
    meas: &Measurement,
    penalty: f64,
    sparsity: usize,
) -> Result<Vector> {
    require_zero_thresholds(model, "BIHT")?;
    biht_like_step(x_prev, model, meas, penalty, sparsity)
}

/// One G-BIHT iteration `H_K(x + (α/2)Φᵀ(r − sign(Φx − b)))`.
pub fn gbiht_step(
    x_prev: &[f64],
    model: &SensingModel,
    meas: &Measurement,
    penalty: f64,
    sparsity: usize,
) -> Result<Vector> {
    biht_like_step(x_prev, model, meas, penalty, sparsity)
}

/// `Φᵀr / ‖Φᵀr‖₂`.
pub fn backprojection(model: &SensingModel, meas: &Measurement) -> Result<Vector> {
    check_measurement(model, meas)?;
    let v = numerics::matvec_t(&model.phi, &meas.bits)?;
    numerics::normalized(&v).ok_or(Error::DegenerateIterate {
        iteration: 0,
        trajectory: Vec::new(),
    })
}

fn initial_point(model: &SensingModel, meas: &Measurement, init: &Init) -> Result<Vector> {
    match init {
        Init::NormalizedBackprojection => backprojection(model, meas),
        Init::Zero => Ok(Vector::zeros(model.n())),
        Init::Given(x0) => {
            ensure_len("initial point", model.n(), x0.len())?;
            Ok(x0.clone())
        }
    }
}

/// Runs `config.iterations` iterations of `algorithm` on exact measurements.
///
/// A degenerate (all-zero) RFPI iterate aborts the run with
/// [`Error::DegenerateIterate`] carrying the iterates produced so far.
pub fn solve(
    algorithm: ClassicAlgorithm,
    model: &SensingModel,
    meas: &Measurement,
    config: &SolverConfig,
) -> Result<Trajectory> {
    config.validate(algorithm)?;
    if meas.mode != EncodeMode::Exact {
        return Err(Error::contract("classic solvers take exact measurements"));
    }
    if !algorithm.uses_thresholds() {
        require_zero_thresholds(model, algorithm.name())?;
    }
    let mut iterates = Vec::with_capacity(config.iterations + 1);
    iterates.push(initial_point(model, meas, &config.init)?);
    for i in 1..=config.iterations {
        let prev = &iterates[i - 1];
        let next = match algorithm {
            ClassicAlgorithm::Rfpi => rfpi_step(prev, model, meas, config.step_size, config.penalty),
            ClassicAlgorithm::Grfpi => grfpi_step(prev, model, meas, config.step_size, config.penalty),
            ClassicAlgorithm::Biht => biht_step(prev, model, meas, config.penalty, config.sparsity.unwrap_or_default()),
            ClassicAlgorithm::Gbiht => {
                gbiht_step(prev, model, meas, config.penalty, config.sparsity.unwrap_or_default())
            }
        };
        match next {
            Ok(x) => iterates.push(x),
            Err(Error::DegenerateIterate { .. }) => {
                return Err(Error::DegenerateIterate {
                    iteration: i,
                    trajectory: iterates,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        iterates,
        normalize_readout: algorithm == ClassicAlgorithm::Biht,
    })
}

pub fn rfpi_solve(model: &SensingModel, meas: &Measurement, config: &SolverConfig) -> Result<Trajectory> {
    solve(ClassicAlgorithm::Rfpi, model, meas, config)
}

pub fn grfpi_solve(model: &SensingModel, meas: &Measurement, config: &SolverConfig) -> Result<Trajectory> {
    solve(ClassicAlgorithm::Grfpi, model, meas, config)
}

pub fn biht_solve(model: &SensingModel, meas: &Measurement, config: &SolverConfig) -> Result<Trajectory> {
    solve(ClassicAlgorithm::Biht, model, meas, config)
}

pub fn gbiht_solve(model: &SensingModel, meas: &Measurement, config: &SolverConfig) -> Result<Trajectory> {
    solve(ClassicAlgorithm::Gbiht, model, meas, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::signal_model::{encode, mse_direction, sample_signal, SignalSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_force_top_k(u: &[f64], k: usize) -> Vec<f64> {
        // Enumerate every k-subset; the best keeps the most energy, and among
        // equals the lexicographically smallest index set.
        let n = u.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mags: Vec<f64> = {
                let mut m: Vec<f64> = idx.iter().map(|&i| u[i].abs()).collect();
                m.sort_by(|a, b| b.total_cmp(a));
                m
            };
            let better = match &best {
                None => true,
                Some((_, bidx)) => {
                    let mut bm: Vec<f64> = bidx.iter().map(|&i| u[i].abs()).collect();
                    bm.sort_by(|a, b| b.total_cmp(a));
                    mags > bm || (mags == bm && idx < *bidx)
                }
            };
            if better {
                best = Some((0.0, idx));
            }
        }
        let mut out = vec![0.0; n];
        for i in best.unwrap().1 {
            out[i] = u[i];
        }
        out
    }

    #[test]
    fn soft_shrink_cases() {
        assert_eq!(soft_shrink(&[2.0, -0.5], &[1.0, 1.0]).unwrap().as_slice(), &[1.0, 0.0]);
        let t = [0.3, -4.0, 0.0];
        assert_eq!(soft_shrink(&t, &[0.0; 3]).unwrap().as_slice(), &t);
        assert!(soft_shrink(&[1.0], &[-0.1]).is_err());
    }

    #[test]
    fn soft_shrink_matches_piecewise_definition() {
        let mut rng = RngStream::new(4);
        let t = rng.gaussian_vector(50);
        let tau: Vec<f64> = rng.gaussian_vector(50).iter().map(|v| v.abs()).collect();
        let out = soft_shrink(&t, &tau).unwrap();
        for i in 0..50 {
            let expected = if t[i] > tau[i] {
                t[i] - tau[i]
            } else if t[i] < -tau[i] {
                t[i] + tau[i]
            } else {
                0.0
            };
            assert_eq!(out[i], expected);
        }
    }

    #[test]
    fn hard_threshold_cases() {
        assert_eq!(
            hard_threshold(&[3.0, -1.0, 0.0, 2.0], 2).unwrap().as_slice(),
            &[3.0, 0.0, 0.0, 2.0]
        );
        let u = [0.1, -0.2, 0.3];
        assert_eq!(hard_threshold(&u, 3).unwrap().as_slice(), &u);
        assert_eq!(
            hard_threshold(&[1.0, -1.0, 1.0], 2).unwrap().as_slice(),
            &[1.0, -1.0, 0.0]
        );
        assert_eq!(brute_force_top_k(&[1.0, -1.0, 1.0], 2), vec![1.0, -1.0, 0.0]);
        assert!(hard_threshold(&u, 0).is_err());
        assert!(hard_threshold(&u, 4).is_err());
    }

    fn tiny_model() -> (SensingModel, Measurement, Vec<f64>) {
        let phi = Matrix::from_row_major(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let model = SensingModel::zero_threshold(phi);
        // Measurements deliberately inconsistent with the starting point.
        let meas = Measurement {
            bits: Vector::new(vec![-1.0, 1.0]),
            mode: EncodeMode::Exact,
        };
        let s = 0.5f64.sqrt();
        (model, meas, vec![s, s])
    }

    #[test]
    fn rfpi_step_hand_evaluation() {
        let (model, meas, x) = tiny_model();
        let (delta, alpha) = (0.1, 2.0);
        // Scalar re-derivation of the four update steps.
        let s = x[0];
        let phix = [s * 1.0 + s * 2.0, s * -1.0 + s * 0.5];
        let c = [-phix[0], phix[1]];
        let rho = [(-c[0]).max(0.0), (-c[1]).max(0.0)];
        // (RΦ)ᵀρ with RΦ = [[-1, -2], [-1, 0.5]]
        let d = [-(-1.0 * rho[0] + -1.0 * rho[1]), -(-2.0 * rho[0] + 0.5 * rho[1])];
        let dx = d[0] * x[0] + d[1] * x[1];
        let t = [
            (1.0 + delta * dx) * x[0] - delta * d[0],
            (1.0 + delta * dx) * x[1] - delta * d[1],
        ];
        let tau = delta / alpha;
        let v = [
            t[0].signum() * (t[0].abs() - tau).max(0.0),
            t[1].signum() * (t[1].abs() - tau).max(0.0),
        ];
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let out = rfpi_step(&x, &model, &meas, delta, alpha).unwrap();
        assert_relative_eq!(out[0], v[0] / nv, max_relative = 1e-14);
        assert_relative_eq!(out[1], v[1] / nv, max_relative = 1e-14);
    }

    #[test]
    fn rfpi_fixed_point_when_consistent() {
        let mut rng = RngStream::new(21);
        let model = SensingModel::zero_threshold(rng.gaussian_matrix(20, 6));
        let x = numerics::normalized(&rng.gaussian_vector(6)).unwrap();
        let meas = encode(&model, &x, EncodeMode::Exact).unwrap();
        let out = rfpi_step(&x, &model, &meas, 0.3, f64::INFINITY).unwrap();
        for i in 0..6 {
            assert_relative_eq!(out[i], x[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn rfpi_rejects_non_unit_input_and_thresholds() {
        let (model, meas, _) = tiny_model();
        assert!(rfpi_step(&[1.0, 1.0], &model, &meas, 0.1, 1.0).is_err());
        let mut with_b = model.clone();
        with_b.thresholds = Vector::new(vec![0.1, 0.0]);
        assert!(rfpi_step(&[1.0, 0.0], &with_b, &meas, 0.1, 1.0).is_err());
    }

    #[test]
    fn rfpi_degenerate_iterate_is_reported() {
        let (model, meas, x) = tiny_model();
        // A huge shrinkage threshold zeroes everything on the first step.
        let config = SolverConfig {
            init: Init::Given(Vector::new(x)),
            ..SolverConfig::rfpi(0.1, 1e-6, 5)
        };
        match rfpi_solve(&model, &meas, &config) {
            Err(Error::DegenerateIterate { iteration, trajectory }) => {
                assert_eq!(iteration, 1);
                assert_eq!(trajectory.len(), 1);
            }
            other => panic!("expected degenerate iterate, got {other:?}"),
        }
    }

    #[test]
    fn grfpi_hand_evaluation() {
        let phi = Matrix::from_row_major(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let model = SensingModel::new(phi, Vector::new(vec![0.5, -0.25]), 50.0).unwrap();
        let meas = Measurement {
            bits: Vector::new(vec![-1.0, 1.0]),
            mode: EncodeMode::Exact,
        };
        let x: [f64; 2] = [0.2, 0.4];
        let (delta, alpha) = (0.5, 5.0);
        let y: [f64; 2] = [0.2 + 0.8 - 0.5, -0.2 + 0.2 + 0.25];
        let rho = [(-(-1.0 * y[0])).max(0.0f64), (-(1.0 * y[1])).max(0.0f64)];
        let d = [
            -(1.0 * -1.0 * rho[0] + -1.0 * 1.0 * rho[1]),
            -(2.0 * -1.0 * rho[0] + 0.5 * 1.0 * rho[1]),
        ];
        let tau = delta / alpha;
        let expected: Vec<f64> = (0..2)
            .map(|i| {
                let t = x[i] - delta * d[i];
                t.signum() * (t.abs() - tau).max(0.0)
            })
            .collect();
        let out = grfpi_step(&x, &model, &meas, delta, alpha).unwrap();
        assert_relative_eq!(out[0], expected[0], max_relative = 1e-14);
        assert_relative_eq!(out[1], expected[1], max_relative = 1e-14);
    }

    #[test]
    fn biht_hand_evaluation() {
        let (model, meas, x) = tiny_model();
        let alpha = 0.4;
        let phix = [x[0] + 2.0 * x[1], -x[0] + 0.5 * x[1]];
        let res = [-1.0 - phix[0].signum(), 1.0 - phix[1].signum()];
        let g = [res[0] - res[1], 2.0 * res[0] + 0.5 * res[1]];
        let u = [x[0] + 0.2 * g[0], x[1] + 0.2 * g[1]];
        let expected = if u[0].abs() >= u[1].abs() {
            [u[0], 0.0]
        } else {
            [0.0, u[1]]
        };
        let out = biht_step(&x, &model, &meas, alpha, 1).unwrap();
        assert_eq!(out.as_slice(), &expected);
    }

    #[test]
    fn biht_consistent_point_only_thresholds() {
        let mut rng = RngStream::new(2);
        let model = SensingModel::zero_threshold(rng.gaussian_matrix(30, 8));
        let x = rng.gaussian_vector(8);
        let meas = encode(&model, &x, EncodeMode::Exact).unwrap();
        let out = biht_step(&x, &model, &meas, 0.7, 3).unwrap();
        assert_eq!(out, hard_threshold(&x, 3).unwrap());
        // K = n leaves a plain subgradient step.
        let y = rng.gaussian_vector(8);
        let full = biht_step(&y, &model, &meas, 0.7, 8).unwrap();
        let s = numerics::exact_sign(&numerics::matvec(&model.phi, &y).unwrap());
        let res: Vec<f64> = meas.bits.iter().zip(s.iter()).map(|(a, b)| a - b).collect();
        let g = numerics::matvec_t(&model.phi, &res).unwrap();
        for i in 0..8 {
            assert_eq!(full[i], y[i] + 0.35 * g[i]);
        }
    }

    #[test]
    fn gbiht_fixed_point_when_consistent() {
        let mut rng = RngStream::new(6);
        let model = SensingModel::gaussian(30, 8, &mut rng);
        let x = sample_signal(SignalSpec::new(8, 3).unwrap(), &mut rng).unwrap();
        let meas = encode(&model, x.values(), EncodeMode::Exact).unwrap();
        let out = gbiht_step(x.values(), &model, &meas, 0.5, 3).unwrap();
        assert_eq!(&out, x.values());
        let g = grfpi_step(x.values(), &model, &meas, 0.5, f64::INFINITY).unwrap();
        assert_eq!(&g, x.values());
    }

    fn setup(seed: u64, n: usize, m: usize, k: usize) -> (SensingModel, Measurement, Vector) {
        let mut rng = RngStream::new(seed);
        let model = SensingModel::zero_threshold(rng.gaussian_matrix(m, n));
        let x = sample_signal(SignalSpec::new(n, k).unwrap(), &mut rng).unwrap();
        let meas = encode(&model, x.values(), EncodeMode::Exact).unwrap();
        (model, meas, x.values().clone())
    }

    #[test]
    fn trajectory_lengths() {
        let (model, meas, _) = setup(1, 16, 64, 3);
        let t = rfpi_solve(&model, &meas, &SolverConfig::rfpi(0.01, 1.0, 0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.iterates[0], backprojection(&model, &meas).unwrap());
        let t = rfpi_solve(&model, &meas, &SolverConfig::rfpi(0.01, 1.0, 7)).unwrap();
        assert_eq!(t.len(), 8);
        for x in &t.iterates {
            assert_relative_eq!(numerics::norm2(x), 1.0, epsilon = 1e-12);
        }
        let t = biht_solve(&model, &meas, &SolverConfig::biht(0.01, 3, 9)).unwrap();
        assert_eq!(t.len(), 10);
        assert_relative_eq!(numerics::norm2(&t.final_estimate().unwrap()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn config_is_checked() {
        let (model, meas, _) = setup(1, 16, 64, 3);
        let mut cfg = SolverConfig::biht(0.01, 3, 2);
        cfg.sparsity = None;
        assert!(biht_solve(&model, &meas, &cfg).is_err());
        assert!(rfpi_solve(&model, &meas, &SolverConfig::biht(0.01, 3, 2)).is_err());
        assert!(rfpi_solve(&model, &meas, &SolverConfig::rfpi(-1.0, 1.0, 2)).is_err());
    }

    #[test]
    fn rfpi_improves_direction_in_most_trials() {
        let mut improved = 0;
        for seed in 0..100 {
            let (model, meas, x) = setup(1000 + seed, 64, 256, 4);
            let t = rfpi_solve(&model, &meas, &SolverConfig::rfpi(0.002, 0.05, 30)).unwrap();
            let first = mse_direction(&x, &t.iterates[0]).unwrap();
            let last = mse_direction(&x, &t.final_estimate().unwrap()).unwrap();
            if last < first {
                improved += 1;
            }
        }
        assert!(improved >= 80, "improved in {improved}/100");
    }

    #[test]
    fn biht_recovers_support_on_small_instances() {
        // Brute force over all K-subsets finds the most consistent support;
        // BIHT should land on it for most small noiseless instances.
        let (n, m, k) = (10, 60, 2);
        let mut agree = 0;
        for seed in 0..40 {
            let (model, meas, x) = setup(500 + seed, n, m, k);
            let t = biht_solve(&model, &meas, &SolverConfig::biht(0.005, k, 60)).unwrap();
            let est = t.final_estimate().unwrap();
            let est_support: Vec<usize> = (0..n).filter(|&i| est[i] != 0.0).collect();
            let true_support: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
            if est_support == true_support {
                agree += 1;
            }
        }
        assert!(agree >= 24, "support recovered in {agree}/40");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn soft_shrink_contracts(t in proptest::collection::vec(-5.0f64..5.0, 16),
                                 tau in proptest::collection::vec(0.0f64..3.0, 16)) {
            let out = soft_shrink(&t, &tau).unwrap();
            for i in 0..16 {
                prop_assert!(out[i].abs() <= t[i].abs());
                if t[i] == 0.0 { prop_assert_eq!(out[i], 0.0); }
                if out[i] != 0.0 { prop_assert_eq!(out[i].signum(), t[i].signum()); }
            }
        }

        #[test]
        fn hard_threshold_contracts(u in proptest::collection::vec(-5.0f64..5.0, 1..20), frac in 0.0f64..1.0) {
            let k = 1 + ((u.len() - 1) as f64 * frac) as usize;
            let out = hard_threshold(&u, k).unwrap();
            prop_assert!(out.count_nonzero() <= k);
            for i in 0..u.len() {
                prop_assert!(out[i] == 0.0 || out[i] == u[i]);
            }
            let kept_min = (0..u.len()).filter(|&i| out[i] != 0.0).map(|i| u[i].abs()).fold(f64::INFINITY, f64::min);
            let dropped_max = (0..u.len()).filter(|&i| out[i] == 0.0 && u[i] != 0.0).map(|i| u[i].abs()).fold(0.0, f64::max);
            prop_assert!(out.count_nonzero() == 0 || kept_min >= dropped_max);
        }

        #[test]
        fn hard_threshold_matches_enumeration(u in proptest::collection::vec(
            prop_oneof![Just(1.0f64), Just(-1.0), Just(0.5), -2.0f64..2.0], 1..9), frac in 0.0f64..1.0) {
            let k = 1 + ((u.len() - 1) as f64 * frac) as usize;
            prop_assert_eq!(hard_threshold(&u, k).unwrap().into_inner(), brute_force_top_k(&u, k));
        }

        #[test]
        fn zero_threshold_reductions(seed in any::<u64>(), delta in 1e-3f64..0.5, alpha in 0.1f64..50.0) {
            let mut rng = RngStream::new(seed);
            let model = SensingModel::zero_threshold(rng.gaussian_matrix(24, 8));
            let x = sample_signal(SignalSpec::new(8, 3).unwrap(), &mut rng).unwrap();
            let meas = encode(&model, x.values(), EncodeMode::Exact).unwrap();
            let z = numerics::normalized(&rng.gaussian_vector(8)).unwrap();

            let d = rfpi_gradient(&model, &meas, &z).unwrap();
            let dg = consistency_gradient(&model, &meas, &z).unwrap();
            prop_assert_eq!(&d, &dg);

            // G-RFPI with b = 0 is RFPI's descent and shrink minus the sphere term.
            let g = grfpi_step(&z, &model, &meas, delta, alpha).unwrap();
            let t: Vec<f64> = z.iter().zip(d.iter()).map(|(zi, di)| zi - delta * di).collect();
            let tau = vec![delta / alpha; 8];
            prop_assert_eq!(g, soft_shrink(&t, &tau).unwrap());

            prop_assert_eq!(
                gbiht_step(&z, &model, &meas, alpha, 3).unwrap(),
                biht_step(&z, &model, &meas, alpha, 3).unwrap()
            );
        }

        #[test]
        fn rfpi_iterates_stay_on_sphere(seed in any::<u64>(), delta in 1e-3f64..0.1) {
            let (model, meas, _) = setup(seed, 12, 48, 2);
            if let Ok(t) = rfpi_solve(&model, &meas, &SolverConfig::rfpi(delta, 10.0, 5)) {
                for x in &t.iterates {
                    prop_assert!((numerics::norm2(x) - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn solves_are_deterministic(seed in any::<u64>()) {
            let (model, meas, _) = setup(seed, 12, 48, 2);
            let a = biht_solve(&model, &meas, &SolverConfig::biht(0.01, 2, 5)).unwrap();
            let b = biht_solve(&model, &meas, &SolverConfig::biht(0.01, 2, 5)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
