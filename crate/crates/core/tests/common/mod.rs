#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelmap::models::Model;
use skelmap_tensor::{ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn binary(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect()).unwrap()
}

pub fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let d = rand_distr::StandardNormal;
    Tensor::new(shape, (0..n).map(|_| rng.sample::<f64, _>(d)).collect()).unwrap()
}

/// Outcome of a whole-model gradient check.
#[derive(Debug)]
pub struct GradientReport {
    /// Largest `|g - fd| / max(|g|, |fd|)` over parameter tensors, norms
    /// taken per tensor.
    pub worst_tensor: f64,
    pub worst_tensor_name: String,
    /// Largest finite-difference norm among tensors whose analytic gradient
    /// is exactly zero (biases feeding a batch norm).
    pub worst_zero: f64,
    /// Element-wise worst, for information only: entries near 1e-6 sit at
    /// the f64 noise floor of a loss in the tens.
    pub worst_element: f64,
}

impl GradientReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_tensor < tol && self.worst_zero < 1e-8
    }
}

/// Compares the taped gradient of every parameter against fourth-order
/// central differences with step `h`.
pub fn check_model_gradients(model: &mut Model, h: f64, loss: impl Fn(&mut Model, &mut Tape) -> Var) -> GradientReport {
    model.params_mut().zero_grad();
    let mut tape = Tape::new();
    let l = loss(model, &mut tape);
    tape.backward(l, model.params_mut()).unwrap();
    let entries: Vec<_> = model
        .params()
        .iter()
        .map(|(id, p)| (id, p.name().to_string(), p.grad.data().to_vec()))
        .collect();
    let eval = |m: &mut Model| {
        let mut t = Tape::new();
        let v = loss(m, &mut t);
        t.value(v).item().unwrap()
    };
    let mut report = GradientReport {
        worst_tensor: 0.0,
        worst_tensor_name: String::new(),
        worst_zero: 0.0,
        worst_element: 0.0,
    };
    for (id, name, analytic) in entries {
        let (mut diff2, mut a2, mut f2) = (0.0, 0.0, 0.0);
        for (i, &g) in analytic.iter().enumerate() {
            let orig = model.params().get(id).value.data()[i];
            let mut at = |v: f64| {
                set(model.params_mut(), id, i, v);
                eval(model)
            };
            let fd = (8.0 * (at(orig + h) - at(orig - h)) - (at(orig + 2.0 * h) - at(orig - 2.0 * h))) / (12.0 * h);
            set(model.params_mut(), id, i, orig);
            diff2 += (g - fd) * (g - fd);
            a2 += g * g;
            f2 += fd * fd;
            report.worst_element = report.worst_element.max(rel_err(g, fd));
        }
        if a2.sqrt() < 1e-12 && f2.sqrt() < 1e-6 {
            report.worst_zero = report.worst_zero.max(f2.sqrt());
            continue;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(f2.sqrt());
        if rel > report.worst_tensor {
            report.worst_tensor = rel;
            report.worst_tensor_name = name;
        }
    }
    report
}

fn set(store: &mut ParamStore, id: skelmap_tensor::ParamId, i: usize, v: f64) {
    store.get_mut(id).value.data_mut()[i] = v;
}

/// `count` sparse random windows of `frames` frames in one segment.
pub fn random_windows(count: usize, frames: usize, seed: u64) -> Vec<skelmap::dataset::SequentialSkeletonMap> {
    let mut r = rng(seed);
    let n = skelmap::poseio::IMAGE_PIXELS * frames;
    (0..count)
        .map(|i| {
            let px = (0..n).map(|_| u8::from(r.gen_bool(0.1))).collect();
            skelmap::dataset::SequentialSkeletonMap::new("r", i as u64, frames, px).unwrap()
        })
        .collect()
}

/// A small full-resolution config that trains in well under a second.
pub fn small_config() -> skelmap::models::ModelConfig {
    skelmap::models::ModelConfig {
        latent_dim: 4,
        window: 3,
        lstm_hidden: 12,
        feature_dim: 10,
        conv_channels: [2, 4],
        ..skelmap::models::ModelConfig::default()
    }
}

/// Element-wise check of every scalar in `store` against central
/// differences; returns the worst relative error.
pub fn check_op_gradients(store: &mut ParamStore, build: impl Fn(&ParamStore, &mut Tape) -> Var) -> f64 {
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = build(store, &mut tape);
    tape.backward(loss, store).unwrap();
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.data().to_vec()).collect();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = build(s, &mut t);
        t.value(l).item().unwrap()
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for (pi, id) in ids.into_iter().enumerate() {
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            set(store, id, i, orig + FD_STEP);
            let up = eval(store);
            set(store, id, i, orig - FD_STEP);
            let down = eval(store);
            set(store, id, i, orig);
            worst = worst.max(rel_err(analytic[pi][i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Uniform values in `[-1, 1)`.
pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}
