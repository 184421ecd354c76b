use super::*;
use crate::autodiff::grad_check;
use crate::numerics::{self, RngStream};
use crate::signal_model::{sample_signal, SignalSpec};
use crate::solvers::{self, SolverConfig};
use proptest::prelude::*;

fn model_for(variant: Variant, m: usize, n: usize, layers: usize, seed: u64) -> UnfoldedModel {
    let mut rng = RngStream::new(seed);
    let (step, penalty) = match variant {
        Variant::LRfpi => (0.01, 0.5),
        Variant::LgRfpi => (0.01, 5.0),
        Variant::LBiht | Variant::LgBiht => (0.0, 0.02),
    };
    let k = (!variant.is_rfpi_family()).then_some(3);
    let dec = DecoderParams::constant(variant, layers, n, step, penalty, k).unwrap();
    initial_model(variant, m, n, dec, 50.0, &mut rng).unwrap()
}

fn classic_config(variant: Variant, layers: usize) -> SolverConfig {
    match variant {
        Variant::LRfpi => SolverConfig::rfpi(0.01, 0.5, layers),
        Variant::LgRfpi => SolverConfig::rfpi(0.01, 5.0, layers),
        _ => SolverConfig::biht(0.02, 3, layers),
    }
}

#[test]
fn eval_mode_reproduces_solver_trajectories() {
    for variant in Variant::ALL {
        for seed in 0..3 {
            let model = model_for(variant, 64, 16, 12, seed);
            let mut rng = RngStream::new(100 + seed);
            let x = sample_signal(SignalSpec::new(16, 3).unwrap(), &mut rng).unwrap();
            let out = model.forward(x.values(), Mode::Eval).unwrap();
            let meas = encode(&model.encoder, x.values(), EncodeMode::Exact).unwrap();
            let traj = solvers::solve(variant.classic(), &model.encoder, &meas, &classic_config(variant, 12)).unwrap();
            assert_eq!(out.init, traj.iterates[0], "{variant}");
            for (i, z) in out.layers.iter().enumerate() {
                assert_eq!(z, &traj.iterates[i + 1], "{variant} layer {i}");
                assert_eq!(
                    &out.estimates[i],
                    &traj.readout(i + 1).unwrap(),
                    "{variant} readout {i}"
                );
            }
        }
    }
}

#[test]
fn l_biht_single_layer_on_consistent_input() {
    // Φ = [I; I; I] makes z₀ = sign(x)/√n, whose own encoding is r again, so
    // the residual vanishes and the layer reduces to H_K(z₀) renormalized.
    let n = 6;
    let mut data = Vec::new();
    for _ in 0..3 {
        data.extend_from_slice(Matrix::identity(n).as_slice());
    }
    let phi = Matrix::from_row_major(3 * n, n, data).unwrap();
    let dec = DecoderParams::new(Variant::LBiht, vec![0.3], None, Some(2)).unwrap();
    let model = UnfoldedModel::new(SensingModel::zero_threshold(phi), dec).unwrap();
    let x = [0.5, -1.0, 2.0, -0.1, 0.3, 0.7];
    let out = model.forward(&x, Mode::Eval).unwrap();
    let z0 = &out.init;
    assert_eq!(encode(&model.encoder, z0, EncodeMode::Exact).unwrap().bits, out.bits);
    let expected = numerics::normalized(&solvers::hard_threshold(z0, 2).unwrap()).unwrap();
    assert_eq!(out.estimates[0], expected);
    assert_eq!(out.layers[0], solvers::hard_threshold(z0, 2).unwrap());
}

#[test]
fn eval_estimates_have_documented_structure() {
    let model = model_for(Variant::LRfpi, 48, 12, 6, 9);
    let x = sample_signal(SignalSpec::new(12, 3).unwrap(), &mut RngStream::new(1)).unwrap();
    let out = model.forward(x.values(), Mode::Eval).unwrap();
    for z in &out.estimates {
        assert!((numerics::norm2(z) - 1.0).abs() < 1e-12);
    }
    for variant in [Variant::LBiht, Variant::LgBiht] {
        let model = model_for(variant, 48, 12, 6, 9);
        for mode in [Mode::Eval, Mode::Train] {
            let out = model.forward(x.values(), mode).unwrap();
            for z in &out.layers {
                assert!(z.count_nonzero() <= 3);
            }
        }
    }
}

#[test]
fn param_counts() {
    assert_eq!(param_count(Variant::LRfpi, 30, 128), 3870);
    assert_eq!(param_count(Variant::LgRfpi, 30, 128), 3870);
    assert_eq!(param_count(Variant::LBiht, 30, 128), 30);
    assert_eq!(param_count(Variant::LgBiht, 30, 128), 30);
    for (l, n) in [(1, 4), (10, 32), (30, 128)] {
        // Relative to the base algorithm's two constants δ and α.
        assert_eq!(param_count(Variant::LRfpi, l, n) - 2, l * (n + 1) - 2);
        let model = model_for(Variant::LRfpi, 2 * n, n, l, 0);
        let decoder_values: usize = model
            .param_values()
            .iter()
            .filter(|(id, _)| matches!(id, ParamId::Delta(_) | ParamId::Tau(_)))
            .map(|(_, v)| v.len())
            .sum();
        assert_eq!(decoder_values, param_count(Variant::LRfpi, l, n));
    }
}

#[test]
fn field_mismatches_are_rejected() {
    assert!(DecoderParams::new(Variant::LRfpi, vec![0.1], None, None).is_err());
    assert!(DecoderParams::new(Variant::LBiht, vec![0.1], None, None).is_err());
    assert!(DecoderParams::new(Variant::LBiht, vec![0.1], Some(vec![Vector::zeros(2)]), Some(1)).is_err());
    assert!(DecoderParams::new(Variant::LRfpi, vec![], Some(vec![]), None).is_err());
    let mut model = model_for(Variant::LRfpi, 16, 4, 2, 0);
    model.encoder.thresholds[0] = 0.5;
    assert!(model.validate().is_err());
    assert!(model.forward(&[0.0; 4], Mode::Eval).is_err());
}

fn simple_loss(model: &UnfoldedModel, tape: &mut Tape, x: &[f64], layers: usize) -> Result<Var> {
    let rec = model.record(tape, x, layers)?;
    let target = tape.vector(x);
    let mut total = tape.scalar(0.0);
    for e in rec.estimates {
        let diff = tape.sub(e, target)?;
        let sq = tape.reduce_sum_sq(diff);
        total = tape.add(total, sq)?;
    }
    Ok(total)
}

#[test]
fn train_mode_gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let mut passed = 0;
        for seed in 0..12 {
            let base = model_for(variant, 16, 8, 2, seed);
            let x = sample_signal(SignalSpec::new(8, 3).unwrap(), &mut RngStream::new(seed + 50)).unwrap();
            let target: Vec<f64> = x.values().to_vec();
            let build = |tape: &mut Tape, p: &ParamValues| {
                let m = base.with_param_values(p)?;
                simple_loss(&m, tape, &target, 2)
            };
            let report = grad_check(build, &base.param_values(), 1e-6).unwrap();
            if report.kink_margin < 1e-3 {
                continue;
            }
            assert!(report.max_rel_error <= 1e-4, "{variant} seed {seed}: {report:?}");
            passed += 1;
        }
        assert!(passed >= 6, "{variant}: only {passed} trials clear of kinks");
    }
}

#[test]
fn inactive_layers_get_zero_gradient() {
    let model = model_for(Variant::LRfpi, 16, 8, 3, 2);
    let x = sample_signal(SignalSpec::new(8, 2).unwrap(), &mut RngStream::new(3)).unwrap();
    let mut tape = Tape::new();
    let loss = simple_loss(&model, &mut tape, x.values(), 1).unwrap();
    let g = tape.backward(loss).unwrap();
    for i in 1..3 {
        assert_eq!(g.get(ParamId::Delta(i)).unwrap(), &[0.0]);
        assert!(g.get(ParamId::Tau(i)).unwrap().iter().all(|v| *v == 0.0));
    }
    assert!(g.get(ParamId::Delta(0)).unwrap()[0] != 0.0);
    assert!(g.get(ParamId::Thresholds).is_none());
}

#[test]
fn train_forward_is_deterministic_and_close_to_eval_far_from_kinks() {
    let model = model_for(Variant::LgBiht, 64, 16, 4, 5);
    let x = sample_signal(SignalSpec::new(16, 3).unwrap(), &mut RngStream::new(8)).unwrap();
    let a = model.forward(x.values(), Mode::Train).unwrap();
    let b = model.forward(x.values(), Mode::Train).unwrap();
    assert_eq!(a, b);
    for bit in a.bits.iter() {
        assert!(bit.abs() < 1.0 + 1e-15);
    }
}

#[test]
fn lg_rfpi_with_zero_thresholds_differs_from_l_rfpi_only_by_sphere_term() {
    let mut rng = RngStream::new(77);
    for _ in 0..20 {
        let phi = rng.gaussian_matrix(32, 8);
        let x = sample_signal(SignalSpec::new(8, 2).unwrap(), &mut rng).unwrap();
        let model = SensingModel::zero_threshold(phi.clone());
        let meas = encode(&model, x.values(), EncodeMode::Exact).unwrap();
        let z = numerics::normalized(&rng.gaussian_vector(8)).unwrap();
        let delta = 0.05;
        let d = solvers::rfpi_gradient(&model, &meas, &z).unwrap();

        // LG-RFPI layer with b = 0 and no shrinkage gives z − δd.
        let dec = DecoderParams::new(Variant::LgRfpi, vec![delta], Some(vec![Vector::zeros(8)]), None).unwrap();
        let lg = UnfoldedModel::new(SensingModel::zero_threshold(phi.clone()), dec).unwrap();
        let lg_t = one_layer_from(&lg, &meas, &z);
        // L-RFPI pre-normalization t = (1 + δdᵀz)z − δd.
        let dtz = numerics::dot(&d, &z);
        for i in 0..8 {
            let l_t = (1.0 + delta * dtz) * z[i] - delta * d[i];
            assert!(((l_t - delta * dtz * z[i]) - lg_t[i]).abs() < 1e-12);
        }
    }
}

/// One LG-RFPI layer applied to an arbitrary `z` instead of `z₀`.
fn one_layer_from(model: &UnfoldedModel, meas: &Measurement, z: &Vector) -> Vector {
    let b = Vector::zeros(model.m());
    let tau = model.decoder.tau.as_ref().unwrap();
    let mut ops = EvalOps;
    let y = ops.matvec(&model.encoder.phi, z).unwrap();
    let y = ops.sub(&y, &b).unwrap();
    let c = ops.mul(&meas.bits, &y).unwrap();
    let nc = ops.neg(&c);
    let rho = ops.relu(&nc);
    let w = ops.mul(&meas.bits, &rho).unwrap();
    let g = ops.matvec_t(&model.encoder.phi, &w).unwrap();
    let d = ops.neg(&g);
    let step = ops.scale(&model.decoder.delta[0], &d).unwrap();
    let t = ops.sub(z, &step).unwrap();
    let s = ops.sign(&t).unwrap();
    let a = ops.abs(&t);
    let a = ops.sub(&a, &tau[0]).unwrap();
    let a = ops.relu(&a);
    ops.mul(&s, &a).unwrap()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for variant in Variant::ALL {
        let mut model = model_for(variant, 20, 5, 3, 11);
        // Awkward values exercise full-precision serialization.
        model.decoder.delta = vec![0.1 + 0.2, 1.0 / 3.0, std::f64::consts::PI * 1e-7];
        let ck = Checkpoint::from_model(&model, 42).unwrap();
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);
        assert_eq!(back.rng_seed(), 42);
    }
}

#[test]
fn checkpoint_checksum_matches_independent_hash() {
    let model = model_for(Variant::LgBiht, 6, 3, 2, 1);
    let ck = Checkpoint::from_model(&model, 7).unwrap();
    // serde_json's default map keeps keys sorted, which is the canonical form.
    let mut doc: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
    let stored = doc.remove("checksum").unwrap();
    let canonical = serde_json::to_string(&doc).unwrap();
    use sha2::{Digest, Sha256};
    let hex: String = Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(stored.as_str().unwrap(), hex);
}

#[test]
fn checkpoint_rejects_tampering_and_schema() {
    let model = model_for(Variant::LRfpi, 6, 3, 2, 1);
    let ck = Checkpoint::from_model(&model, 7).unwrap();
    let text = ck.to_json().unwrap();
    let tampered = text.replacen("\"rng_seed\": 7", "\"rng_seed\": 8", 1);
    assert!(matches!(Checkpoint::from_json(&tampered), Err(Error::Checksum { .. })));
    let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
    assert!(matches!(Checkpoint::from_json(&future), Err(Error::SchemaVersion(9))));
}

#[test]
fn component_mask_mixes_models() {
    let learned = model_for(Variant::LRfpi, 16, 4, 2, 1);
    let base = model_for(Variant::LRfpi, 16, 4, 2, 2);
    let phi_only = ComponentMask {
        phi: true,
        ..ComponentMask::NONE
    };
    let mixed = phi_only.compose(&learned, &base).unwrap();
    assert_eq!(mixed.encoder.phi, learned.encoder.phi);
    assert_eq!(mixed.decoder, base.decoder);
    let all = ComponentMask {
        thresholds: false,
        ..ComponentMask::ALL
    };
    assert_eq!(all.compose(&learned, &base).unwrap(), learned);
    assert!(ComponentMask::ALL.compose(&learned, &base).is_err());
    let other = model_for(Variant::LRfpi, 16, 4, 3, 2);
    assert!(phi_only.compose(&learned, &other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eval_equivalence_random(seed in any::<u64>(), which in 0usize..4) {
        let variant = Variant::ALL[which];
        let model = model_for(variant, 40, 10, 5, seed);
        let x = sample_signal(SignalSpec::new(10, 3).unwrap(), &mut RngStream::new(seed ^ 1)).unwrap();
        let meas = encode(&model.encoder, x.values(), EncodeMode::Exact).unwrap();
        let traj = solvers::solve(variant.classic(), &model.encoder, &meas, &classic_config(variant, 5));
        let out = model.decode_eval(&meas);
        match (traj, out) {
            (Ok(traj), Ok(out)) => {
                for (i, z) in out.layers.iter().enumerate() {
                    prop_assert_eq!(z, &traj.iterates[i + 1]);
                }
            }
            (Err(Error::DegenerateIterate { iteration: a, .. }), Err(Error::DegenerateIterate { iteration: b, .. })) => {
                prop_assert_eq!(a, b);
            }
            (a, b) => prop_assert!(false, "solver {:?} vs network {:?}", a.is_ok(), b.is_ok()),
        }
    }
}
