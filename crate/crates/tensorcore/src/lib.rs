//! Dense `f64` tensors, a differentiation tape over the layer set needed by
//! convolutional and recurrent autoencoders, and an Adam optimizer.
//!
//! ```
//! use skelmap_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap()).unwrap();
//! let mut tape = Tape::new();
//! let x = tape.constant(Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap());
//! let wv = tape.param(&store, w);
//! let y = tape.linear(x, wv, None).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.get(w).grad.data(), &[2.0, 3.0]);
//! ```

mod error;
mod kernels;
mod lstm;
mod optim;
mod param;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use lstm::{LstmCell, GATE_ORDER};
pub use optim::{Adam, AdamConfig};
pub use param::{BatchNormStats, ParamId, ParamStore, Parameter};
pub use tape::{bce_sum_values, kl_term_values, logistic, Activation, Mode, Tape, Var, PREDICTION_CLAMP};
pub use tensor::{Tensor, MAX_RANK};
