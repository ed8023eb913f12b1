//! Reverse-mode automatic differentiation over dense real tensors.
//!
//! Operations are evaluated eagerly and recorded on a [`Tape`]. Calling
//! [`Tape::backward`] on a scalar sweeps the tape in reverse and returns
//! the gradient of every node that depends on a trainable leaf.
//!
//! Complex arithmetic is expressed with [`CVar`], a pair of real tensors
//! holding the real and imaginary parts. Gradients of a real loss with
//! respect to a complex quantity `z = a + ib` are reported as the pair
//! `(dL/da, dL/db)`.
//!
//! ```
//! use adsf_autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(vec![3.0], &[1]);
//! let y = x.mul(&x).unwrap().sum();
//! let grads = tape.backward(&y).unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[6.0]);
//! ```

mod checkpoint;
mod complex;
pub mod gradcheck;
mod kernels;
mod ops;
mod optim;
mod params;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
pub use complex::CVar;
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};

/// Additive value used to exclude positions from a softmax.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}
