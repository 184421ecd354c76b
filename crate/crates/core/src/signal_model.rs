//! Sparse sources, the one-bit encoder and the evaluation metrics.

use rand::seq::index;

use crate::error::{ensure_len, Error, Result};
use crate::numerics::{self, Matrix, RngStream, Vector};

/// Smoothness of the `tanh` surrogate used when training.
pub const DEFAULT_SMOOTHNESS: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignalSpec {
    pub n: usize,
    pub sparsity: usize,
}

impl SignalSpec {
    pub fn new(n: usize, sparsity: usize) -> Result<Self> {
        let spec = SignalSpec { n, sparsity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.sparsity == 0 || self.sparsity > self.n {
            return Err(Error::contract(format!(
                "sparsity {} must lie in 1..={}",
                self.sparsity, self.n
            )));
        }
        Ok(())
    }
}

/// A length-`n` vector with exactly `K` nonzero entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSignal {
    values: Vector,
    support: Vec<usize>,
}

impl SparseSignal {
    pub fn values(&self) -> &Vector {
        &self.values
    }

    /// Sorted indices of the nonzero entries.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draws a uniformly random support of size `K` and fills it with standard
/// normal values.
pub fn sample_signal(spec: SignalSpec, rng: &mut RngStream) -> Result<SparseSignal> {
    spec.validate()?;
    let mut support = index::sample(rng.inner(), spec.n, spec.sparsity).into_vec();
    support.sort_unstable();
    let mut values = Vector::zeros(spec.n);
    for &i in &support {
        let mut v = rng.gaussian();
        while v == 0.0 {
            v = rng.gaussian();
        }
        values[i] = v;
    }
    Ok(SparseSignal { values, support })
}

/// Encoder parameters: sensing matrix, quantization thresholds and the
/// smoothness of the training-time sign surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingModel {
    pub phi: Matrix,
    pub thresholds: Vector,
    pub smoothness: f64,
}

impl SensingModel {
    pub fn new(phi: Matrix, thresholds: Vector, smoothness: f64) -> Result<Self> {
        let model = SensingModel {
            phi,
            thresholds,
            smoothness,
        };
        model.validate()?;
        Ok(model)
    }

    /// A model with all-zero thresholds.
    pub fn zero_threshold(phi: Matrix) -> Self {
        let m = phi.rows();
        SensingModel {
            phi,
            thresholds: Vector::zeros(m),
            smoothness: DEFAULT_SMOOTHNESS,
        }
    }

    /// Φ and b with i.i.d. N(0, 1) entries.
    pub fn gaussian(m: usize, n: usize, rng: &mut RngStream) -> Self {
        let phi = rng.gaussian_matrix(m, n);
        let thresholds = rng.gaussian_vector(m);
        SensingModel {
            phi,
            thresholds,
            smoothness: DEFAULT_SMOOTHNESS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_len("SensingModel thresholds", self.phi.rows(), self.thresholds.len())?;
        if !(self.smoothness > 0.0) {
            return Err(Error::contract("smoothness must be positive"));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.phi.rows()
    }

    pub fn n(&self) -> usize {
        self.phi.cols()
    }

    pub fn has_zero_thresholds(&self) -> bool {
        self.thresholds.iter().all(|&b| b == 0.0)
    }

    /// `Φx − b`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vector> {
        let mut y = numerics::matvec(&self.phi, x)?;
        for (yi, bi) in y.iter_mut().zip(self.thresholds.iter()) {
            *yi -= bi;
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    Exact,
    Smooth,
}

/// One-bit measurements. Exact mode holds ±1 entries; smooth mode holds
/// entries in (−1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub bits: Vector,
    pub mode: EncodeMode,
}

pub fn encode(model: &SensingModel, x: &[f64], mode: EncodeMode) -> Result<Measurement> {
    ensure_len("encode", model.n(), x.len())?;
    let y = model.pre_activation(x)?;
    let bits = match mode {
        EncodeMode::Exact => numerics::exact_sign(&y),
        EncodeMode::Smooth => numerics::smooth_sign(&y, model.smoothness)?,
    };
    Ok(Measurement { bits, mode })
}

/// Number of measurements whose sign disagrees with `x`, i.e. entries with
/// `r[i]·(Φx − b)[i] < 0`.
pub fn consistency_violations(meas: &Measurement, model: &SensingModel, x: &[f64]) -> Result<usize> {
    if meas.mode != EncodeMode::Exact {
        return Err(Error::contract("consistency is defined for exact measurements only"));
    }
    ensure_len("consistency_violations", model.m(), meas.bits.len())?;
    let y = model.pre_activation(x)?;
    Ok(meas.bits.iter().zip(y.iter()).filter(|(r, v)| *r * *v < 0.0).count())
}

/// `‖x − x̂‖² / n`.
pub fn mse_amplitude(x: &[f64], xhat: &[f64]) -> Result<f64> {
    ensure_len("mse_amplitude", x.len(), xhat.len())?;
    let sq: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / x.len() as f64)
}

/// `‖x/‖x‖ − x̂/‖x̂‖‖² / n`.
pub fn mse_direction(x: &[f64], xhat: &[f64]) -> Result<f64> {
    ensure_len("mse_direction", x.len(), xhat.len())?;
    let xd = numerics::normalized(x).ok_or_else(|| Error::contract("direction metric needs a nonzero source"))?;
    let xhd = numerics::normalized(xhat).ok_or_else(|| Error::contract("direction metric needs a nonzero estimate"))?;
    mse_amplitude(&xd, &xhd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn full_support_is_dense() {
        let s = sample_signal(SignalSpec::new(4, 4).unwrap(), &mut RngStream::new(1)).unwrap();
        assert_eq!(s.support(), &[0, 1, 2, 3]);
        assert!(s.values().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = SignalSpec::new(128, 16).unwrap();
        let a = sample_signal(spec, &mut RngStream::new(5)).unwrap();
        let b = sample_signal(spec, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_sparsity_is_rejected() {
        assert!(SignalSpec::new(4, 5).is_err());
        let bad = SignalSpec { n: 4, sparsity: 5 };
        assert!(sample_signal(bad, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn support_frequency_is_uniform() {
        // Index 0 lands in the support with probability K/n = 0.25.
        let spec = SignalSpec::new(8, 2).unwrap();
        let mut rng = RngStream::new(77);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| sample_signal(spec, &mut rng).unwrap().support().contains(&0))
            .count();
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn encode_exact_cases() {
        let model = SensingModel::zero_threshold(Matrix::identity(2));
        let m = encode(&model, &[0.5, -2.0], EncodeMode::Exact).unwrap();
        assert_eq!(m.bits.as_slice(), &[1.0, -1.0]);

        // Φx = b everywhere gives all +1.
        let phi = Matrix::identity(3);
        let model = SensingModel::new(phi, Vector::new(vec![0.2, -1.0, 3.0]), 50.0).unwrap();
        let m = encode(&model, &[0.2, -1.0, 3.0], EncodeMode::Exact).unwrap();
        assert_eq!(m.bits.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn smooth_encoding_rounds_to_exact_away_from_zero() {
        let mut rng = RngStream::new(8);
        let model = SensingModel::gaussian(64, 16, &mut rng);
        let x = rng.gaussian_vector(16);
        let pre = model.pre_activation(&x).unwrap();
        let exact = encode(&model, &x, EncodeMode::Exact).unwrap();
        let smooth = encode(&model, &x, EncodeMode::Smooth).unwrap();
        for i in 0..64 {
            assert!(smooth.bits[i].abs() <= 1.0);
            if pre[i].abs() >= 0.2 {
                assert_eq!(numerics::sign_scalar(smooth.bits[i]), exact.bits[i]);
            }
        }
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let model = SensingModel::zero_threshold(Matrix::identity(2));
        assert!(encode(&model, &[1.0, 2.0, 3.0], EncodeMode::Exact).is_err());
    }

    #[test]
    fn violations_cases() {
        let mut rng = RngStream::new(12);
        let model = SensingModel::zero_threshold(rng.gaussian_matrix(40, 10));
        let x = rng.gaussian_vector(10);
        let meas = encode(&model, &x, EncodeMode::Exact).unwrap();
        assert_eq!(consistency_violations(&meas, &model, &x).unwrap(), 0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(consistency_violations(&meas, &model, &neg).unwrap(), 40);

        // Independent element-wise re-check against a random candidate.
        let cand = rng.gaussian_vector(10);
        let mut expected = 0;
        for i in 0..40 {
            let row = model.phi.row(i);
            let v: f64 = row.iter().zip(&cand).map(|(a, b)| a * b).sum();
            if meas.bits[i] * v < 0.0 {
                expected += 1;
            }
        }
        assert_eq!(consistency_violations(&meas, &model, &cand).unwrap(), expected);

        let smooth = encode(&model, &x, EncodeMode::Smooth).unwrap();
        assert!(consistency_violations(&smooth, &model, &x).is_err());
    }

    #[test]
    fn mse_cases() {
        let x = [1.0, -2.0, 0.0, 0.5];
        assert_eq!(mse_amplitude(&x, &x).unwrap(), 0.0);
        assert_eq!(mse_direction(&x, &x).unwrap(), 0.0);
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_relative_eq!(mse_direction(&x, &doubled).unwrap(), 0.0, epsilon = 1e-15);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert_relative_eq!(mse_amplitude(&x, &doubled).unwrap(), sq / 4.0);
        assert!(mse_direction(&x, &[0.0; 4]).is_err());
    }

    #[test]
    fn mse_matches_formula() {
        let mut rng = RngStream::new(31);
        let x = rng.gaussian_vector(20);
        let y = rng.gaussian_vector(20);
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut amp = 0.0;
        let mut dir = 0.0;
        for i in 0..20 {
            amp += (x[i] - y[i]).powi(2);
            dir += (x[i] / nx - y[i] / ny).powi(2);
        }
        assert_relative_eq!(mse_amplitude(&x, &y).unwrap(), amp / 20.0, max_relative = 1e-14);
        assert_relative_eq!(mse_direction(&x, &y).unwrap(), dir / 20.0, max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn encoder_positive_scale_invariance(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let mut rng = RngStream::new(seed);
            let model = SensingModel::gaussian(24, 8, &mut rng);
            let x = rng.gaussian_vector(8);
            let scaled = SensingModel::new(model.phi.scaled(c), model.thresholds.iter().map(|b| c * b).collect(), 50.0).unwrap();
            // The two pre-activations differ by the factor c only up to rounding;
            // skip draws that sit within rounding distance of a sign change.
            let pre = model.pre_activation(&x).unwrap();
            prop_assume!(pre.iter().all(|v| v.abs() > 1e-9));
            prop_assert_eq!(
                encode(&model, &x, EncodeMode::Exact).unwrap(),
                encode(&scaled, &x, EncodeMode::Exact).unwrap()
            );
        }

        #[test]
        fn self_consistency(seed in any::<u64>(), k in 1usize..=8, with_thresholds in any::<bool>()) {
            let mut rng = RngStream::new(seed);
            let mut model = SensingModel::gaussian(32, 8, &mut rng);
            if !with_thresholds {
                model.thresholds = Vector::zeros(32);
            }
            let x = sample_signal(SignalSpec::new(8, k).unwrap(), &mut rng).unwrap();
            let meas = encode(&model, x.values(), EncodeMode::Exact).unwrap();
            prop_assert_eq!(consistency_violations(&meas, &model, x.values()).unwrap(), 0);
        }

        #[test]
        fn sample_has_exact_sparsity(seed in any::<u64>(), n in 1usize..64, frac in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * frac) as usize;
            let s = sample_signal(SignalSpec::new(n, k).unwrap(), &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!(s.values().count_nonzero(), k);
            prop_assert_eq!(s.support().len(), k);
        }

        #[test]
        fn direction_mse_ignores_estimate_scale(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let mut rng = RngStream::new(seed);
            let x = rng.gaussian_vector(12);
            let y = rng.gaussian_vector(12);
            let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
            let a = mse_direction(&x, &y).unwrap();
            let b = mse_direction(&x, &scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (a + 1e-300));
        }
    }
}
