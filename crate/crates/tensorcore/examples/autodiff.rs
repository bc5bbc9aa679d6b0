//! Fits a one-layer logistic model with the tape and Adam, then compares a
//! taped gradient with a central difference.
//!
//! cargo run -p skelmap-tensor --example autodiff

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skelmap_tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};

fn loss(store: &ParamStore, x: &Tensor, y: &Tensor) -> (Tape, skelmap_tensor::Var) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.param(store, store.id("w").unwrap());
    let b = tape.param(store, store.id("b").unwrap());
    let z = tape.linear(xv, w, Some(b)).unwrap();
    let p = tape.logistic(z);
    // bce_sum is a log-likelihood; minimise its negation
    let ll = tape.bce_sum(y, p).unwrap();
    let l = tape.scale(ll, -1.0);
    (tape, l)
}

fn main() -> skelmap_tensor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // points above the line x0 + x1 = 0 are positive
    let x = Tensor::uniform(&[64, 2], 1.0, &mut rng)?;
    let y = Tensor::new(
        &[64, 1],
        x.data().chunks(2).map(|p| if p[0] + p[1] > 0.0 { 1.0 } else { 0.0 }).collect(),
    )?;

    let mut store = ParamStore::new();
    store.add("w", Tensor::zeros(&[1, 2])?)?;
    store.add("b", Tensor::zeros(&[1])?)?;
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &store);
    for step in 0..=200 {
        store.zero_grad();
        let (tape, l) = loss(&store, &x, &y);
        tape.backward(l, &mut store)?;
        if step % 50 == 0 {
            println!("step {step:>3}: loss {:.4}", tape.value(l).item().unwrap_or(f64::NAN));
        }
        adam.step(&mut store);
    }
    println!("w = {:?}, b = {:?}", store.by_name("w").unwrap().value.data(), store.by_name("b").unwrap().value.data());

    store.zero_grad();
    let (tape, l) = loss(&store, &x, &y);
    tape.backward(l, &mut store)?;
    let id = store.id("w")?;
    let analytic = store.get(id).grad.data()[0];
    let h = 1e-6;
    let eval = |delta: f64| {
        let mut w = store.get(id).value.clone();
        w.data_mut()[0] += delta;
        let mut s = store.clone();
        s.set_value(id, w).unwrap();
        let (t, l) = loss(&s, &x, &y);
        t.value(l).item().unwrap()
    };
    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
    println!("dL/dw0: tape {analytic:.8}, central difference {numeric:.8}");
    Ok(())
}
