use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankabs::distribution::{GeneralExample, PointExample, Setting};
use rankabs::hypothesis::{random_point_in_unit_ball, ConstraintSpec, Hypothesis, HypothesisClass, Params};
use rankabs::losses::{AbstentionConfig, PNorm, PhiKind, PhiSpec, Sign};
use rankabs::risk::{best_in_class_risk, LossSelector, RStarMethod};
use rankabs::trainer::*;

fn label(rng: &mut ChaCha8Rng) -> Sign {
    if rng.gen_bool(0.5) {
        Sign::Pos
    } else {
        Sign::Neg
    }
}

fn random_set(rng: &mut ChaCha8Rng, setting: Setting, n: usize, dim: usize) -> TrainingSet {
    match setting {
        Setting::General => TrainingSet::General(
            (0..n)
                .map(|_| GeneralExample {
                    x: random_point_in_unit_ball(rng, dim, PNorm::L2),
                    xp: random_point_in_unit_ball(rng, dim, PNorm::L2),
                    y: label(rng),
                })
                .collect(),
        ),
        Setting::Bipartite => TrainingSet::Bipartite(
            (0..n).map(|_| PointExample { x: random_point_in_unit_ball(rng, dim, PNorm::L2), y: label(rng) }).collect(),
        ),
    }
}

/// True when some pair sits within `tol` of a hinge or ReLU kink.
fn near_kink(h: &Hypothesis, data: &TrainingSet, phi: &PhiSpec, tol: f64) -> bool {
    let relu_near = |x: &[f64]| match h.params() {
        Params::ReluNet { w, b, .. } => {
            w.iter().zip(b).any(|(wj, bj)| (wj.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bj).abs() < tol)
        }
        Params::Linear { .. } => false,
    };
    (0..data.n_pairs()).any(|k| {
        let p = data.pair(k);
        let t = h.eval(p.xp).unwrap() - h.eval(p.x).unwrap();
        relu_near(p.x) || relu_near(p.xp) || (phi.kind() == PhiKind::Hinge && ((t.abs() - 1.0).abs() < tol))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_gradient_matches_central_differences(
        seed in 0u64..10_000,
        network in any::<bool>(),
        bipartite in any::<bool>(),
        kind in 0usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ConstraintSpec::new(2.0, 1.0, 2.0, PNorm::L2).unwrap();
        let class = if network { HypothesisClass::relu_net(2, 5, c) } else { HypothesisClass::linear(2, c) };
        let h = class.random(&mut rng);
        let setting = if bipartite { Setting::Bipartite } else { Setting::General };
        let data = random_set(&mut rng, setting, 6, 2);
        let phi = PhiSpec::new(PhiKind::ALL[kind], 1.7).unwrap();
        prop_assume!(!near_kink(&h, &data, &phi, 1e-3));

        let grad = empirical_surrogate_grad(&h, &data, &phi).unwrap();
        let theta = h.flat_params();
        let step = 1e-6;
        for i in 0..theta.len() {
            let shifted = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                empirical_surrogate_loss(&h.with_flat_params(&t).unwrap(), &data, &phi).unwrap()
            };
            let numeric = (shifted(step) - shifted(-step)) / (2.0 * step);
            let scale = grad[i].abs().max(numeric.abs()).max(1e-3);
            prop_assert!((grad[i] - numeric).abs() <= 1e-5 * scale, "param {}: {} vs {}", i, grad[i], numeric);
        }
    }

    #[test]
    fn trained_model_is_feasible_and_no_worse_than_start(
        seed in 0u64..10_000,
        network in any::<bool>(),
        bipartite in any::<bool>(),
        kind in 0usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ConstraintSpec::unit(PNorm::L2);
        let class = if network { HypothesisClass::relu_net(2, 4, c) } else { HypothesisClass::linear(2, c) };
        let h0 = class.random(&mut rng);
        let setting = if bipartite { Setting::Bipartite } else { Setting::General };
        let data = random_set(&mut rng, setting, 12, 2);
        let phi = PhiSpec::new(PhiKind::ALL[kind], 1.0).unwrap();
        let cfg = TrainConfig { epochs: 15, batch_size: 8, lr0: 0.5, seed, ..TrainConfig::new(phi, setting, PNorm::L2) };
        let out = train(&data, &h0, &cfg).unwrap();
        prop_assert!(out.hypothesis.is_feasible(1e-12));
        let start = empirical_surrogate_loss(&h0, &data, &phi).unwrap();
        let end = empirical_surrogate_loss(&out.hypothesis, &data, &phi).unwrap();
        prop_assert!(end <= start);
        prop_assert_eq!(out.trace.rows.len(), cfg.epochs + 1);
        for w in out.trace.rows.windows(2) {
            prop_assert!(w[1].mean_surrogate_loss <= w[0].mean_surrogate_loss);
        }
    }
}

#[test]
fn every_step_stays_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let class = HypothesisClass::relu_net(2, 4, ConstraintSpec::new(0.5, 0.2, 0.7, PNorm::L2).unwrap());
    let data = random_set(&mut rng, Setting::General, 10, 2);
    let mut h = class.random(&mut rng);
    let mut state = SgdState::new(&h);
    let batch: Vec<_> = (0..data.n_pairs()).map(|k| data.pair(k)).collect();
    for _ in 0..200 {
        h = sgd_step(&h, &batch, &mut state, &PhiSpec::exponential(), 5.0, 0.9).unwrap();
        assert!(h.is_feasible(1e-12));
    }
}

#[test]
fn momentum_zero_is_plain_projected_sgd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let class = HypothesisClass::linear(2, ConstraintSpec::unit(PNorm::L2));
    let data = random_set(&mut rng, Setting::Bipartite, 5, 2);
    let h = class.random(&mut rng);
    let phi = PhiSpec::sigmoid(1.0).unwrap();
    let batch: Vec<_> = (0..data.n_pairs()).map(|k| data.pair(k)).collect();
    let (_, g) = minibatch_surrogate_grad(&h, &batch, &phi).unwrap();
    let mut state = SgdState::new(&h);
    let next = sgd_step(&h, &batch, &mut state, &phi, 0.3, 0.0).unwrap();
    let manual: Vec<f64> = h.flat_params().iter().zip(&g).map(|(t, g)| t - 0.3 * g).collect();
    assert_eq!(next, h.with_flat_params(&manual).unwrap().project());
}

#[test]
fn separable_instance_reaches_grid_optimum() {
    let ex = |x: f64, xp: f64, y| GeneralExample { x: vec![x], xp: vec![xp], y };
    let mut sample = Vec::new();
    for _ in 0..25 {
        sample.push(ex(-0.3, 0.5, Sign::Pos));
        sample.push(ex(0.4, -0.2, Sign::Neg));
    }
    let data = TrainingSet::General(sample);
    let class = HypothesisClass::linear(1, ConstraintSpec::unit(PNorm::L2));
    let none = AbstentionConfig::none(PNorm::L2);
    let dist = data.to_distribution(PNorm::L2).unwrap();
    for phi in [PhiSpec::hinge(), PhiSpec::exponential(), PhiSpec::sigmoid(1.0).unwrap()] {
        let cfg = TrainConfig { batch_size: 16, ..TrainConfig::new(phi, Setting::General, PNorm::L2) };
        let out = train(&data, &class.null(), &cfg).unwrap();
        let rstar = best_in_class_risk(&LossSelector::Surrogate(phi), &none, &dist, &class, RStarMethod::DEFAULT_GRID).unwrap();
        let got = out.trace.last().unwrap().mean_surrogate_loss;
        assert!(got <= 1.05 * rstar.value, "{phi}: {got} vs R* {}", rstar.value);
        assert_eq!(out.trace.last().unwrap().mean_target_abstention_loss, 0.0);
    }
}

#[test]
fn same_seed_gives_bitwise_identical_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let class = HypothesisClass::relu_net(2, 6, ConstraintSpec::unit(PNorm::L2));
    let data = random_set(&mut rng, Setting::Bipartite, 9, 2);
    let h0 = class.random(&mut rng);
    let cfg = TrainConfig { epochs: 30, batch_size: 10, seed: 99, ..TrainConfig::new(PhiSpec::exponential(), Setting::Bipartite, PNorm::L2) };
    let a = train(&data, &h0, &cfg).unwrap();
    let b = train(&data, &h0, &cfg).unwrap();
    let bits = |h: &Hypothesis| h.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.hypothesis), bits(&b.hypothesis));
    assert_eq!(a.trace, b.trace);
}
