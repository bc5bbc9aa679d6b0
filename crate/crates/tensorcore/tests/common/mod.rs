#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skelmap_tensor::{ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a small absolute floor so that two gradients that are
/// both numerically zero compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares taped gradients against central finite differences for every
/// scalar in `store`. Returns the worst relative error.
pub fn check_gradients<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&ParamStore, &mut Tape) -> Var,
{
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
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_err(analytic[pi][i], numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// Six-nested-loop cross-correlation.
pub fn reference_conv2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [f, _, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * ho * wo];
    for bi in 0..n {
        for fi in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((fi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bi * f + fi) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, f, ho, wo], out).unwrap()
}

/// Scatter-form transposed convolution.
pub fn reference_conv_transpose2d(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize, out_pad: usize) -> Tensor {
    let [n, cin, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [_, cout, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let ho = (h - 1) * stride + kh + out_pad - 2 * pad;
    let wo = (w - 1) * stride + kw + out_pad - 2 * pad;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            for v in &mut out[(bi * cout + co) * ho * wo..(bi * cout + co + 1) * ho * wo] {
                *v = b.data()[co];
            }
        }
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x.data()[((bi * cin + ci) * h + iy) * w + ix];
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                out[((bi * cout + co) * ho + oy as usize) * wo + ox as usize] +=
                                    xv * k.data()[((ci * cout + co) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out).unwrap()
}

pub fn reference_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let mut out = vec![0.0; n * dout];
    for r in 0..n {
        for o in 0..dout {
            let mut acc = b.data()[o];
            for i in 0..din {
                acc += w.data()[o * din + i] * x.data()[r * din + i];
            }
            out[r * dout + o] = acc;
        }
    }
    Tensor::new(&[n, dout], out).unwrap()
}
