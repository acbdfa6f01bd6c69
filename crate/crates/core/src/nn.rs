//! Neural-network infrastructure: reverse-mode autodiff, LSTM cells and the
//! Adam optimizer.
//!
//! All values are `f64` matrices. The [`tape::Tape`] records a computation
//! graph op by op and differentiates it exactly in reverse; every op's
//! gradient is validated against central finite differences in the tests.
//! Training loops build one tape per minibatch, pull gradients for the
//! registered parameter leaves and discard the tape.

pub mod lstm;
pub mod opt;
pub mod tape;

pub use lstm::{lstm_step, lstm_step_plain, register_lstm, LstmParams, LstmVars};
pub use opt::{clip_global_norm, Adam};
pub use tape::{Gradients, Tape, Var};

use ndarray::Array2;
use rand::Rng;

/// Xavier/Glorot uniform initialization: `U(-s, s)` with
/// `s = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}
