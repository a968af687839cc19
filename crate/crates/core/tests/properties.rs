//! Property tests across module boundaries.

use nclab_core::data::{apply_shift, ClusterGenerator, ShiftKind, ShiftSpec};
use nclab_core::metrics::nc_suite;
use nclab_core::model::{forward_on_tape, Activation, Architecture, Mode, Model, ParamId, TapeModel};
use nclab_core::tensor::ops::argmax;
use nclab_core::tensor::Rng;
use nclab_core::tta::{
    plan_batch, total_loss_with_plan, unit_classifier, AdaptConfig, Adapter, BatchPlan, LossVariant, Method,
    UpdatePolicy,
};
use nclab_core::{Matrix, Tape};
use proptest::prelude::*;

fn arch(d: usize, k: usize) -> Architecture {
    Architecture { input_dim: d, hidden: vec![7, 6], num_classes: k, final_activation: Activation::Identity }
}

fn shift_kind() -> impl Strategy<Value = ShiftKind> {
    prop::sample::select(ShiftKind::ALL.to_vec())
}

fn variant() -> impl Strategy<Value = LossVariant> {
    prop::sample::select(LossVariant::ALL.to_vec())
}

/// Loss and its gradient w.r.t. the adaptable parameters, with running statistics.
fn eval_grad(model: &Model, x: &Matrix, plan: &BatchPlan, cfg: &AdaptConfig) -> (f64, Vec<f64>) {
    let obj = cfg.objective(model.params.num_classes()).unwrap();
    let omega_unit = unit_classifier(model.params.classifier()).unwrap();
    let mut tape = Tape::new();
    let tm = TapeModel::register(&mut tape, &model.params, |id| id != ParamId::Classifier);
    let xv = tape.constant(x.clone());
    let f = forward_on_tape(&mut tape, &tm, model, xv, Mode::Eval).unwrap();
    let loss = total_loss_with_plan(&mut tape, f.h, f.log_p, &omega_unit, plan, &obj).unwrap().loss.unwrap();
    let g = tape.backward(loss).unwrap();
    let flat = tm
        .iter()
        .filter(|(id, _)| *id != ParamId::Classifier)
        .flat_map(|(_, v)| g.get(v).unwrap().data().to_vec())
        .collect();
    (tape.value(loss)[(0, 0)], flat)
}

fn eval_plan(model: &Model, x: &Matrix, cfg: &AdaptConfig) -> BatchPlan {
    let f = model.predict(x).unwrap();
    let obj = cfg.objective(model.params.num_classes()).unwrap();
    plan_batch(&f.h, &f.p.map(f64::ln), model.params.classifier(), &obj).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_and_seed_fix_every_sample(seed in any::<u64>(), k in 2usize..5, d in 2usize..8, stream in 0u64..4) {
        let a = ClusterGenerator::new(k, d, 0.5, seed).unwrap().sample(3, stream).unwrap();
        let b = ClusterGenerator::new(k, d, 0.5, seed).unwrap().sample(3, stream).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shifts_keep_labels_and_magnitudes_rise(seed in any::<u64>(), kind in shift_kind(), sev in 1u8..=5) {
        let d = ClusterGenerator::new(3, 6, 0.5, seed).unwrap().sample(5, 0).unwrap();
        let s = apply_shift(&d, &ShiftSpec::new(kind, sev, seed ^ 1).unwrap()).unwrap();
        prop_assert_eq!(s.labels(), d.labels());
        prop_assert!(s.is_shifted());
        let mags: Vec<f64> = (1..=5u8).map(|v| ShiftSpec::new(kind, v, 0).unwrap().magnitude()).collect();
        prop_assert!(mags.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn logits_are_linear_in_the_classifier(seed in any::<u64>(), b in 1usize..10) {
        let m = Model::init(&arch(4, 3), seed).unwrap();
        let mut m2 = m.clone();
        let omega2 = m.params.classifier().scale(2.0);
        *m2.params.param_mut(ParamId::Classifier) = omega2;
        let mut rng = Rng::new(seed);
        let x = Matrix::from_fn(b, 4, |_, _| rng.normal());
        let (z1, z2) = (m.predict(&x).unwrap().z, m2.predict(&x).unwrap().z);
        prop_assert_eq!(&z1.scale(2.0), &z2);
        for i in 0..b {
            prop_assert_eq!(argmax(z1.row(i)), argmax(z2.row(i)));
        }
    }

    #[test]
    fn collapsed_features_classify_by_nearest_mean(seed in any::<u64>(), k in 2usize..6, reps in 2usize..5) {
        let mut rng = Rng::new(seed);
        let means: Vec<Vec<f64>> = (0..k).map(|_| rng.unit_vector(k + 2)).collect();
        let omega = Matrix::from_rows(&means).unwrap();
        let y: Vec<usize> = (0..k * reps).map(|i| i % k).collect();
        let h = Matrix::from_fn(y.len(), k + 2, |i, j| means[y[i]][j]);
        let r = nc_suite(&h, &y, &omega).unwrap();
        prop_assert!(r.nc1.abs() < 1e-12);
        prop_assert_eq!(r.nc4, 1.0);
    }

    #[test]
    fn filtered_samples_carry_no_gradient(seed in any::<u64>(), v in variant(), b in 6usize..14) {
        let m = Model::init(&arch(4, 3), seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(1));
        let x = Matrix::from_fn(b, 4, |_, _| 3.0 * rng.normal());
        let mut cfg = AdaptConfig { loss_variant: v, k: 1, ..AdaptConfig::default() };
        let ents: Vec<f64> = eval_plan(&m, &x, &AdaptConfig { gamma_ent: Some(1e9), ..cfg.clone() })
            .samples.iter().map(|s| s.entropy).collect();
        let mut sorted = ents.clone();
        sorted.sort_by(f64::total_cmp);
        cfg.gamma_ent = Some(sorted[b / 2]);
        let plan = eval_plan(&m, &x, &cfg);
        let kept = plan.passed();
        prop_assume!(!kept.is_empty() && kept.len() < b);

        let (full_loss, full) = eval_grad(&m, &x, &plan, &cfg);
        let xs = x.select_rows(&kept);
        let (sub_loss, sub) = eval_grad(&m, &xs, &eval_plan(&m, &xs, &cfg), &cfg);
        // the objective averages over the whole batch, so rescale by batch sizes
        let (bf, bs) = (b as f64, kept.len() as f64);
        prop_assert!((full_loss * bf - sub_loss * bs).abs() <= 1e-12 * (1.0 + full_loss.abs() * bf));
        for (a, c) in full.iter().zip(&sub) {
            prop_assert!((a * bf - c * bs).abs() <= 1e-12 * (1.0 + a.abs() * bf));
        }
    }

    #[test]
    fn accuracy_comes_from_the_pre_update_forward(seed in any::<u64>(), lr in 0.0f64..0.5, b in 2usize..20) {
        let m = Model::init(&arch(4, 3), seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(2));
        let x = Matrix::from_fn(b, 4, |_, _| rng.normal());
        let y: Vec<usize> = (0..b).map(|_| rng.index(3)).collect();
        let cfg = AdaptConfig { lr, gamma_ent: Some(10.0), update_policy: UpdatePolicy::ExtractorAll, ..AdaptConfig::default() };
        let mut a = Adapter::new(m.clone(), cfg).unwrap();
        let log = a.adapt_step(&x, &y, 0).unwrap();
        let before = m.forward_batch_stats(&x).unwrap();
        let correct = (0..b).filter(|&i| argmax(before.z.row(i)) == y[i]).count();
        prop_assert_eq!(log.correct, correct);
    }

    #[test]
    fn classifier_is_never_updated(
        seed in any::<u64>(),
        method in prop::sample::select(Method::ALL.to_vec()),
        policy in prop::sample::select(UpdatePolicy::ALL.to_vec()),
        v in variant(),
    ) {
        let m = Model::init(&arch(4, 3), seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(3));
        let cfg = AdaptConfig {
            lr: 0.3,
            momentum: 0.5,
            gamma_ent: Some(5.0),
            update_policy: policy,
            loss_variant: v,
            k: 1,
            ..AdaptConfig::default()
        }
        .with_method(method);
        let mut a = Adapter::new(m.clone(), cfg).unwrap();
        for _ in 0..4 {
            let x = Matrix::from_fn(8, 4, |_, _| rng.normal());
            let y: Vec<usize> = (0..8).map(|_| rng.index(3)).collect();
            a.adapt_step(&x, &y, 0).unwrap();
        }
        let bits = |w: &Matrix| w.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(a.model().params.classifier()), bits(m.params.classifier()));
    }

    #[test]
    fn degenerate_nctta_matches_tent(seed in any::<u64>(), b in 2usize..20, alpha_eps in 0.1f64..4.0) {
        let m = Model::init(&arch(4, 3), seed).unwrap();
        let mut rng = Rng::new(seed.wrapping_add(4));
        let x = Matrix::from_fn(b, 4, |_, _| 2.0 * rng.normal());
        let chain = AdaptConfig {
            alpha: 1.0, k: 1, nu: 0.0, tau_ent: Some(0.0), epsilon: alpha_eps,
            use_filter: false, nc_weight: 0.0, use_weight: false,
            ..AdaptConfig::default()
        };
        let tent = AdaptConfig::tent();
        let (a, ga) = eval_grad(&m, &x, &eval_plan(&m, &x, &chain), &chain);
        let (t, gt) = eval_grad(&m, &x, &eval_plan(&m, &x, &tent), &tent);
        prop_assert!((a - t).abs() <= 1e-12);
        for (p, q) in ga.iter().zip(&gt) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }
}
