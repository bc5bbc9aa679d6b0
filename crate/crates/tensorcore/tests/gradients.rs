mod common;

use common::{check_gradients, random, rng};
use rand::Rng;
use skelmap_tensor::{Activation, BatchNormStats, LstmCell, Mode, ParamStore, Tape, Tensor, Var};

/// Reduces any output to a scalar through a fixed random weighting so that
/// every output element carries a distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let weights = random(&shape, &mut rng(seed));
    let w = tape.constant(weights);
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(100);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 2, 6, 5], &mut r)).unwrap();
    let k = store.add("k", random(&[3, 2, 3, 3], &mut r)).unwrap();
    let b = store.add("b", random(&[3], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (xv, kv, bv) = (t.param(s, x), t.param(s, k), t.param(s, b));
        let y = t.conv2d(xv, kv, bv, 2, 1).unwrap();
        project(t, y, 1)
    });
    assert!(worst < 1e-5, "conv2d max rel err {worst}");
}

#[test]
fn conv_transpose2d_gradients() {
    let mut r = rng(101);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 3, 3, 4], &mut r)).unwrap();
    let k = store.add("k", random(&[3, 2, 3, 3], &mut r)).unwrap();
    let b = store.add("b", random(&[2], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (xv, kv, bv) = (t.param(s, x), t.param(s, k), t.param(s, b));
        let y = t.conv_transpose2d(xv, kv, bv, 2, 1, 1).unwrap();
        project(t, y, 2)
    });
    assert!(worst < 1e-5, "conv_transpose2d max rel err {worst}");
}

#[test]
fn linear_gradients() {
    let mut r = rng(102);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 5], &mut r)).unwrap();
    let w = store.add("w", random(&[4, 5], &mut r)).unwrap();
    let b = store.add("b", random(&[4], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.linear(xv, wv, Some(bv)).unwrap();
        project(t, y, 3)
    });
    assert!(worst < 1e-5, "linear max rel err {worst}");
}

#[test]
fn lstm_step_gradients() {
    let mut r = rng(103);
    let mut store = ParamStore::new();
    let cell = LstmCell::register(&mut store, "lstm", 3, 4, 1.0, &mut r).unwrap();
    let x = store.add("x", random(&[2, 3], &mut r)).unwrap();
    let h = store.add("h", random(&[2, 4], &mut r)).unwrap();
    let c = store.add("c", random(&[2, 4], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (xv, hv, cv) = (t.param(s, x), t.param(s, h), t.param(s, c));
        let (h1, c1) = cell.step(t, s, xv, hv, cv).unwrap();
        // second step exercises the recurrence through both outputs
        let (h2, c2) = cell.step(t, s, xv, h1, c1).unwrap();
        let a = project(t, h2, 4);
        let b = project(t, c2, 5);
        t.add(a, b).unwrap()
    });
    assert!(worst < 1e-6, "lstm_step max rel err {worst}");
}

#[test]
fn batchnorm_train_gradients() {
    let mut r = rng(104);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 2, 3, 3], &mut r)).unwrap();
    let g = store.add("gamma", random(&[2], &mut r)).unwrap();
    let b = store.add("beta", random(&[2], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let mut stats = BatchNormStats::new(2);
        let (xv, gv, bv) = (t.param(s, x), t.param(s, g), t.param(s, b));
        let y = t.batchnorm(xv, gv, bv, &mut stats, Mode::Train).unwrap();
        project(t, y, 6)
    });
    assert!(worst < 1e-5, "batchnorm max rel err {worst}");
}

#[test]
fn batchnorm_rank2_and_eval_gradients() {
    let mut r = rng(105);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[4, 3], &mut r)).unwrap();
    let g = store.add("gamma", random(&[3], &mut r)).unwrap();
    let b = store.add("beta", random(&[3], &mut r)).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let worst = check_gradients(&mut store, |s, t| {
            let mut stats = BatchNormStats::new(3);
            stats.mean = vec![0.1, -0.3, 0.2];
            stats.var = vec![0.7, 1.3, 2.0];
            let (xv, gv, bv) = (t.param(s, x), t.param(s, g), t.param(s, b));
            let y = t.batchnorm(xv, gv, bv, &mut stats, mode).unwrap();
            project(t, y, 7)
        });
        assert!(worst < 1e-5, "{mode:?} batchnorm max rel err {worst}");
    }
}

#[test]
fn activation_gradients() {
    for (kind, tol) in [(Activation::Tanh, 1e-8), (Activation::Logistic, 1e-8), (Activation::Relu, 1e-8)] {
        let mut r = rng(106);
        let mut store = ParamStore::new();
        // keep relu inputs away from the kink
        let mut v = random(&[5, 4], &mut r);
        v.data_mut().iter_mut().for_each(|x| *x += x.signum() * 0.1);
        let x = store.add("x", v).unwrap();
        let worst = check_gradients(&mut store, |s, t| {
            let xv = t.param(s, x);
            let y = t.activation(xv, kind);
            project(t, y, 8)
        });
        assert!(worst < tol, "{kind:?} max rel err {worst}");
    }
}

#[test]
fn elementwise_and_shape_op_gradients() {
    let mut r = rng(107);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&[4, 6], &mut r)).unwrap();
    let b = store.add("b", random(&[4, 6], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let e = t.exp(av);
        let m = t.mul(e, bv).unwrap();
        let sc = t.scale(m, -0.7);
        let sum = t.add(sc, av).unwrap();
        let left = t.col_slice(sum, 1, 3).unwrap();
        let top = t.row_slice(left, 1, 2).unwrap();
        let bottom = t.row_slice(left, 0, 3).unwrap();
        let cat = t.concat_rows(&[top, bottom]).unwrap();
        let flat = t.reshape(cat, &[15]).unwrap();
        project(t, flat, 9)
    });
    assert!(worst < 1e-5, "elementwise max rel err {worst}");
}

#[test]
fn bce_and_kl_gradients() {
    let mut r = rng(108);
    let mut store = ParamStore::new();
    let logits = store.add("logits", random(&[3, 4], &mut r)).unwrap();
    let target = Tensor::new(&[3, 4], (0..12).map(|_| if r.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let l = t.param(s, logits);
        let y = t.logistic(l);
        t.bce_sum(&target, y).unwrap()
    });
    assert!(worst < 1e-5, "bce max rel err {worst}");

    let mut store = ParamStore::new();
    let mu = store.add("mu", random(&[2, 5], &mut r)).unwrap();
    let lv = store.add("lv", random(&[2, 5], &mut r)).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let (m, l) = (t.param(s, mu), t.param(s, lv));
        t.kl_term(m, l).unwrap()
    });
    assert!(worst < 1e-5, "kl max rel err {worst}");
}

#[test]
fn bce_through_logistic_linear_gradients() {
    let mut r = rng(109);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&[6, 4], &mut r)).unwrap();
    let b = store.add("b", random(&[6], &mut r)).unwrap();
    let x = Tensor::new(&[5, 4], (0..20).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let target = Tensor::new(&[5, 6], (0..30).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()).unwrap();
    let worst = check_gradients(&mut store, |s, t| {
        let xv = t.constant(x.clone());
        let (wv, bv) = (t.param(s, w), t.param(s, b));
        let z = t.linear(xv, wv, Some(bv)).unwrap();
        let y = t.logistic(z);
        t.bce_sum(&target, y).unwrap()
    });
    assert!(worst < 1e-5, "max rel err {worst}");
}

#[test]
fn gradients_are_bitwise_deterministic() {
    let run = || {
        let mut r = rng(110);
        let mut store = ParamStore::new();
        let x = store.add("x", random(&[2, 1, 6, 6], &mut r)).unwrap();
        let k = store.add("k", random(&[3, 1, 3, 3], &mut r)).unwrap();
        let b = store.add("b", random(&[3], &mut r)).unwrap();
        let g = store.add("g", random(&[3], &mut r)).unwrap();
        let be = store.add("be", random(&[3], &mut r)).unwrap();
        let mut stats = BatchNormStats::new(3);
        let mut tape = Tape::new();
        let (xv, kv, bv, gv, bev) = (
            tape.param(&store, x),
            tape.param(&store, k),
            tape.param(&store, b),
            tape.param(&store, g),
            tape.param(&store, be),
        );
        let y = tape.conv2d(xv, kv, bv, 1, 1).unwrap();
        let y = tape.batchnorm(y, gv, bev, &mut stats, Mode::Train).unwrap();
        let y = tape.tanh(y);
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        (tape.value(loss).clone(), store, stats)
    };
    let (l1, s1, st1) = run();
    let (l2, s2, st2) = run();
    assert_eq!(l1.data()[0].to_bits(), l2.data()[0].to_bits());
    assert_eq!(s1, s2);
    assert_eq!(st1, st2);
}
