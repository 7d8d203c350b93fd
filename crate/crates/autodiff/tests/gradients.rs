//! Finite-difference checks for every differentiable op.

use std::sync::Arc;

use eagle_autodiff::{grad_check, Result, Shape, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const OP_TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(Shape::from(shape), values).unwrap()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random(rng, shape, 0.1, 2.0);
    for v in t.values.iter_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Contracts an arbitrary output against fixed weights so the scalar depends
/// on every output coordinate differently.
fn weighted(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let n = tape.value(out).len();
    let shape = tape.shape(out).clone();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 7.0).collect();
    let w = tape.constant(shape, w)?;
    let p = tape.mul(out, w)?;
    Ok(tape.sum_all(p))
}

fn check<F>(name: &str, params: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(|t, v| { let o = f(t, v)?; weighted(t, o) }, &params, EPS).unwrap();
    assert!(
        report.max_relative_error < OP_TOL,
        "{name}: max relative error {:.3e} at {:?} (analytic {}, numeric {})",
        report.max_relative_error,
        report.worst,
        report.analytic,
        report.numeric
    );
}

#[test]
fn per_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a23 = random(&mut rng, &[2, 3], -1.5, 1.5);
    let b34 = random(&mut rng, &[3, 4], -1.5, 1.5);
    check("matmul", vec![a23.clone(), b34.clone()], |t, v| t.matmul(v[0], v[1]));

    let x = random(&mut rng, &[2, 3, 4], -1.5, 1.5);
    let y = random(&mut rng, &[3, 1], -1.5, 1.5);
    check("add_broadcast", vec![x.clone(), y.clone()], |t, v| t.add(v[0], v[1]));
    check("sub_broadcast", vec![x.clone(), y.clone()], |t, v| t.sub(v[0], v[1]));
    check("mul_broadcast", vec![x.clone(), y.clone()], |t, v| t.mul(v[0], v[1]));
    let bias = random(&mut rng, &[4], -1.0, 1.0);
    check("mul_trailing", vec![x.clone(), bias.clone()], |t, v| t.mul(v[0], v[1]));
    check("mul_self", vec![x.clone()], |t, v| t.mul(v[0], v[0]));
    check("scale", vec![x.clone()], |t, v| Ok(t.scale(v[0], -1.7)));
    check("add_scalar", vec![x.clone()], |t, v| Ok(t.add_scalar(v[0], 0.3)));

    check("concat", vec![a23.clone(), random(&mut rng, &[2, 2], -1.0, 1.0)], |t, v| t.concat(&[v[0], v[1]], 1));
    check("slice", vec![x.clone()], |t, v| t.slice(v[0], 2, 1, 2));
    check("reshape", vec![x.clone()], |t, v| t.reshape(v[0], [6, 4]));
    check("transpose", vec![a23.clone()], |t, v| t.transpose(v[0]));
    for axis in 0..3 {
        check("sum", vec![x.clone()], move |t, v| t.sum(v[0], axis));
        check("mean", vec![x.clone()], move |t, v| t.mean(v[0], axis));
    }
    check("sum_all", vec![x.clone()], |t, v| Ok(t.sum_all(v[0])));

    let kinked = away_from_zero(&mut rng, &[3, 4]);
    check("leaky_relu", vec![kinked.clone()], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
    check("elu", vec![kinked.clone()], |t, v| Ok(t.elu(v[0], 1.0)));
    check("sigmoid", vec![x.clone()], |t, v| Ok(t.sigmoid(v[0])));
    check("softplus", vec![x.clone()], |t, v| Ok(t.softplus(v[0])));
    check("gelu", vec![x.clone()], |t, v| Ok(t.gelu(v[0])));
    check("exp", vec![x.clone()], |t, v| Ok(t.exp(v[0])));
    check("log", vec![random(&mut rng, &[3, 4], 0.2, 3.0)], |t, v| t.log(v[0]));
    // Bounds chosen away from the sampled values.
    let c = Tensor::new([5], vec![-1.3, -0.4, 0.1, 0.6, 1.4]).unwrap();
    check("clamp", vec![c], |t, v| Ok(t.clamp(v[0], -0.9, 0.9)));
    let r = Tensor::new([4], vec![-2.2, -0.4, 0.3, 1.8]).unwrap();
    check("huber", vec![r], |t, v| Ok(t.huber(v[0], 1.0)));

    let gain = random(&mut rng, &[4], 0.5, 1.5);
    check("layer_norm", vec![x.clone(), gain, bias.clone()], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));

    let seg: Arc<[usize]> = vec![1, 0, 1, 2, 0, 1, 2].into();
    check("segment_softmax", vec![random(&mut rng, &[7], -2.0, 2.0)], move |t, v| t.segment_softmax(v[0], &seg, 3));

    let idx: Arc<[usize]> = vec![2, 0, 2, 1].into();
    let i2 = Arc::clone(&idx);
    check("gather_rows", vec![random(&mut rng, &[3, 2], -1.0, 1.0)], move |t, v| t.gather_rows(v[0], &idx));
    check("segment_sum", vec![random(&mut rng, &[4, 2], -1.0, 1.0)], move |t, v| t.segment_sum(v[0], &i2, 3));
}

#[test]
fn quadratic_form_is_exact() {
    // f(x) = x^T A x with A symmetric positive definite.
    let a = Tensor::new([3, 3], vec![2.0, 0.5, 0.0, 0.5, 3.0, -0.4, 0.0, -0.4, 1.5]).unwrap();
    let x = Tensor::new([3, 1], vec![0.7, -1.2, 0.4]).unwrap();
    let report = grad_check(
        |t, v| {
            let a = t.constant([3, 3], a.values.clone())?;
            let ax = t.matmul(a, v[0])?;
            let xt = t.transpose(v[0])?;
            let q = t.matmul(xt, ax)?;
            Ok(t.sum_all(q))
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-9, "{report:?}");
}

#[test]
fn detects_wrong_backward_rule() {
    // cube with a derivative that is twice too large
    let x = Tensor::new([3], vec![0.5, -1.0, 1.5]).unwrap();
    let report = grad_check(
        |t, v| {
            let y = t.map_unary(v[0], |x| x * x * x, |x, _| 6.0 * x * x);
            Ok(t.sum_all(y))
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert!(report.max_relative_error > 1e-1, "{report:?}");
}

#[test]
fn constant_objective_passes() {
    let x = Tensor::new([2], vec![1.0, 2.0]).unwrap();
    let report = grad_check(
        |t, v| {
            let z = t.scale(v[0], 0.0);
            let s = t.sum_all(z);
            Ok(t.add_scalar(s, 4.0))
        },
        &[x],
        EPS,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6);
}

#[test]
fn deterministic_values_and_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, &[8, 16], -1.0, 1.0);
        let b = random(&mut rng, &[16, 8], -1.0, 1.0);
        let mut t = Tape::<f32>::new();
        let av = t.param([8, 16], a.values.iter().map(|&v| v as f32).collect()).unwrap();
        let bv = t.param([16, 8], b.values.iter().map(|&v| v as f32).collect()).unwrap();
        let c = t.matmul(av, bv).unwrap();
        let g = t.gelu(c);
        let loss = t.sum_all(g);
        let lv = t.value(loss)[0];
        let grads = t.backward(loss).unwrap();
        (lv.to_bits(), grads.get(av).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn segment_softmax_normalizes_and_is_shift_invariant(
        entries in prop::collection::vec((0usize..4, -20.0f64..20.0), 1..40),
        shifts in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        let segs: Arc<[usize]> = entries.iter().map(|e| e.0).collect::<Vec<_>>().into();
        let scores: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let shifted: Vec<f64> = entries.iter().map(|e| e.1 + shifts[e.0]).collect();
        let mut t = Tape::<f64>::new();
        let x = t.constant([scores.len()], scores).unwrap();
        let xs = t.constant([shifted.len()], shifted).unwrap();
        let y = t.segment_softmax(x, &segs, 4).unwrap();
        let ys = t.segment_softmax(xs, &segs, 4).unwrap();
        let mut sums = [0.0f64; 4];
        let mut present = [false; 4];
        for (k, &s) in segs.iter().enumerate() {
            sums[s] += t.value(y)[k];
            present[s] = true;
            prop_assert!((t.value(y)[k] - t.value(ys)[k]).abs() < 1e-12);
        }
        for s in 0..4 {
            if present[s] {
                prop_assert!((sums[s] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn broadcast_mul_gradient_matches_fd(
        rows in 1usize..4, cols in 1usize..4, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[rows, cols], -2.0, 2.0);
        let b = random(&mut rng, &[cols], -2.0, 2.0);
        let report = grad_check(|t, v| { let o = t.mul(v[0], v[1])?; weighted(t, o) }, &[a, b], EPS).unwrap();
        prop_assert!(report.max_relative_error < OP_TOL);
    }
}
