use skelmap_tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};

#[test]
fn first_step_moves_by_learning_rate() {
    let cfg = AdamConfig::default();
    for g in [3.0, -0.02, 1e-3, -250.0] {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::full(&[4], 1.0).unwrap()).unwrap();
        store.get_mut(p).grad.fill(g);
        let mut adam = Adam::new(cfg, &store);
        adam.step(&mut store);
        assert_eq!(adam.steps(), 1);
        for &v in store.get(p).value.data() {
            let delta = v - 1.0;
            assert_eq!(delta.signum(), -g.signum());
            assert!(delta.abs() <= cfg.lr && delta.abs() >= cfg.lr * (1.0 - 1e-4), "g={g} delta={delta}");
        }
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(&[0.5, -0.25, 8.0]).unwrap()).unwrap();
    let before = store.get(p).value.clone();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    for _ in 0..3 {
        adam.step(&mut store);
    }
    assert_eq!(store.get(p).value, before);
}

/// Scalar Adam written out longhand.
fn reference_trajectory(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn quadratic_trajectory_matches_scalar_reference() {
    let lr = 0.1;
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(&[1.0]).unwrap()).unwrap();
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() }, &store);
    let want = reference_trajectory(1.0, lr, 5);
    for expected in want {
        store.zero_grad();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        adam.step(&mut store);
        assert!((store.get(w).value.data()[0] - expected).abs() < 1e-12);
    }
    assert_eq!(adam.steps(), 5);
}
