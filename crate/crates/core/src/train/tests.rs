use super::*;
use crate::graph::SupplyGraph;
use crate::model::Ablation;
use crate::snapshots::{build_bundle, generate_synthetic, SnapshotConfig, SyntheticConfig};
use proptest::prelude::*;

fn fixture() -> (SplitBundle, GraphInput) {
    let cfg = SyntheticConfig {
        n_regions: 4,
        n_days: 60,
        orders_per_day: 40.0,
        ..SyntheticConfig::default()
    };
    let table = generate_synthetic(&cfg, 2).unwrap();
    let graph = SupplyGraph::build(&table).unwrap();
    let bundle = build_bundle(&table, &graph, &SnapshotConfig::default()).unwrap();
    let input = GraphInput::from_graph(&graph).unwrap();
    (bundle, input)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        encoder_heads: 2,
        gat_heads: 2,
        head_hidden: 4,
        ..ModelConfig::default()
    }
}

fn short_train() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn cosine_endpoints() {
    assert_eq!(cosine_lr(0, 100, 3e-4, 1e-5), 3e-4);
    assert!((cosine_lr(99, 100, 3e-4, 1e-5) - 1e-5).abs() < 1e-18);
    assert!((cosine_lr(50, 101, 3e-4, 1e-5) - (1e-5 + 0.5 * (3e-4 - 1e-5))).abs() < 1e-15);
    assert_eq!(cosine_lr(0, 1, 3e-4, 1e-5), 3e-4);
}

proptest! {
    #[test]
    fn clipping_bounds_the_global_norm(
        a in proptest::collection::vec(-50.0f64..50.0, 1..20),
        b in proptest::collection::vec(-50.0f64..50.0, 1..20),
        max in 0.01f64..5.0,
    ) {
        let mut g = vec![a.clone(), b.clone()];
        let pre = clip_global_norm(&mut g, max);
        let post = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if pre > max {
            prop_assert!(post <= max + 1e-6);
            // Direction is preserved.
            let k = post / pre;
            for (x, y) in g[0].iter().zip(&a) {
                prop_assert!((x - y * k).abs() < 1e-9);
            }
        } else {
            prop_assert_eq!(g, vec![a, b]);
        }
    }
}

#[test]
fn adamw_first_step_matches_closed_form() {
    let cfg = TrainConfig {
        weight_decay: 0.1,
        ..TrainConfig::default()
    };
    let mut p = ModelParams::from_entries(vec![("w".into(), Tensor::new([2], vec![1.0f64, -2.0]).unwrap())]).unwrap();
    let mut opt = AdamW::new(&p, &cfg);
    opt.step(&mut p, &[vec![0.5, -0.25]], 0.01);
    // With bias correction m_hat = g and v_hat = g^2, so the step is lr * sign(g).
    let w = &p.get("w").unwrap().values;
    let want0 = 1.0 - 0.01 * 0.1 * 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
    let want1 = -2.0 - 0.01 * 0.1 * -2.0 - 0.01 * -0.25 / (0.25 + 1e-8);
    assert!((w[0] - want0).abs() < 1e-15);
    assert!((w[1] - want1).abs() < 1e-15);
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let (bundle, graph) = fixture();
    let a = train::<f32>(&bundle, &graph, &tiny_model(), &short_train(), 5).unwrap();
    let b = train::<f32>(&bundle, &graph, &tiny_model(), &short_train(), 5).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint.encode().unwrap(), b.checkpoint.encode().unwrap());
    let best = a.history.iter().map(|r| r.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.checkpoint.best_val_auc, best);
    let at = a.history.iter().find(|r| r.epoch == a.checkpoint.best_epoch).unwrap();
    assert_eq!(at.val_auc, best);
    // The stored parameters reproduce the reported validation AUC.
    let preds = a.checkpoint.predict_split(&bundle, &graph, SplitTag::Val).unwrap();
    assert_eq!(auc(&preds.scores(), &preds.labels()).unwrap(), best);
    let c = train::<f32>(&bundle, &graph, &tiny_model(), &short_train(), 6).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn early_stopping_halts_after_patience() {
    let (bundle, graph) = fixture();
    let cfg = TrainConfig {
        epochs: 30,
        early_stop_patience: 1,
        lr: 1e-9,
        lr_min: 1e-9,
        ..TrainConfig::default()
    };
    let out = train::<f64>(&bundle, &graph, &tiny_model(), &cfg, 1).unwrap();
    assert!(out.history.len() < 30);
    let last = out.history.len();
    assert!(last - out.checkpoint.best_epoch == 1);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (bundle, graph) = fixture();
    for ablation in [Ablation::Full, Ablation::A3SingleTask] {
        let cfg = tiny_model().with_ablation(ablation);
        let out = train::<f32>(&bundle, &graph, &cfg, &TrainConfig { epochs: 1, ..short_train() }, 3).unwrap();
        let bytes = out.checkpoint.encode().unwrap();
        let back = Checkpoint::<f32>::decode(&bytes).unwrap();
        assert_eq!(back, out.checkpoint);
        let p1 = out.checkpoint.predict_split(&bundle, &graph, SplitTag::Test).unwrap();
        let p2 = back.predict_split(&bundle, &graph, SplitTag::Test).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.rows.len(), bundle.counts.test.snapshots * bundle.n_nodes);
        assert_eq!(p1.delays().is_none(), ablation == Ablation::A3SingleTask);
        assert_eq!(checkpoint_precision(&bytes).unwrap(), Precision::F32);
        assert!(matches!(Checkpoint::<f64>::decode(&bytes), Err(EagleError::Compatibility(_))));
        assert!(matches!(Checkpoint::<f32>::decode(&bytes[..bytes.len() - 1]), Err(EagleError::Format(_))));
    }
}

#[test]
fn incompatible_bundle_is_rejected() {
    let (bundle, graph) = fixture();
    let out = train::<f32>(&bundle, &graph, &tiny_model(), &TrainConfig { epochs: 1, ..short_train() }, 3).unwrap();
    let mut other = bundle.clone();
    other.n_nodes += 1;
    assert!(matches!(out.checkpoint.check_compatible(&other), Err(EagleError::Compatibility(_))));
    let mut other = bundle.clone();
    other.stats.as_mut().unwrap().mean[0] += 1.0;
    assert!(matches!(out.checkpoint.check_compatible(&other), Err(EagleError::Compatibility(_))));
}

#[test]
fn single_class_validation_is_rejected() {
    let (mut bundle, graph) = fixture();
    let range = bundle.plan.range(SplitTag::Val);
    for s in &mut bundle.snapshots[range] {
        s.y_class.iter_mut().for_each(|y| *y = false);
    }
    bundle.counts = bundle.recount();
    assert!(matches!(
        train::<f32>(&bundle, &graph, &tiny_model(), &short_train(), 0),
        Err(EagleError::Calibration(_))
    ));
}

#[test]
fn config_validation() {
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { seeds: vec![], ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}
