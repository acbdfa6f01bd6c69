//! Recurrent (LSTM) outcome classifier over padded one-hot sequences.
//!
//! Every row of the padded matrix is consumed, end marker and padding rows
//! included, with no masking: the rows after the prefix carry the padding
//! one-hot and still flow through the recurrence. That choice keeps the
//! hard one-hot path and the differentiable softmax-relaxation path (used
//! when attacking through a decoder) structurally identical, so gradients
//! taken through the soft path describe the same function the classifier
//! evaluates on real prefixes.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{PredictionError, SequenceDataset, TrainingError};
use crate::encoding::SequenceMatrix;
use crate::nn::{
    clip_global_norm, lstm_step, lstm_step_plain, register_lstm, xavier_uniform, Adam,
    LstmParams, Tape, Var,
};
use crate::seeding;

/// Hyperparameters for the recurrent classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentParams {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for RecurrentParams {
    fn default() -> Self {
        RecurrentParams { hidden_size: 32, epochs: 120, learning_rate: 0.02, batch_size: 32 }
    }
}

/// A trained recurrent classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    lstm: LstmParams,
    /// Output head, `(hidden, 1)`.
    w_out: Array2<f64>,
    /// Output bias, `(1, 1)`.
    b_out: Array2<f64>,
    /// Rows consumed per sequence (`max_length + 1`).
    steps: usize,
}

impl RecurrentNet {
    /// Probability of the positive class for a hard one-hot sequence.
    pub fn predict_proba(&self, matrix: &SequenceMatrix) -> Result<f64, PredictionError> {
        if matrix.rows.ncols() != self.lstm.input_dim() {
            return Err(PredictionError::FeatureDimension {
                got: matrix.rows.ncols(),
                expected: self.lstm.input_dim(),
            });
        }
        if matrix.n_rows() != self.steps {
            return Err(PredictionError::FeatureDimension {
                got: matrix.n_rows(),
                expected: self.steps,
            });
        }
        let hidden = self.lstm.hidden;
        let mut h = Array2::zeros((1, hidden));
        let mut c = Array2::zeros((1, hidden));
        for t in 0..self.steps {
            let x = matrix.rows.slice(s![t..t + 1, ..]).to_owned();
            let (h_new, c_new) = lstm_step_plain(&self.lstm, &x, &h, &c);
            h = h_new;
            c = c_new;
        }
        let logit = h.dot(&self.w_out)[(0, 0)] + self.b_out[(0, 0)];
        Ok(sigmoid(logit))
    }

    /// Differentiable logit over one sequence given as per-step probability
    /// rows (each `(1, vocab)`), e.g. the soft unroll of a decoder. Mirrors
    /// [`Self::predict_proba`] step for step.
    pub(crate) fn logit_from_vars(&self, tape: &mut Tape, rows: &[Var]) -> Var {
        let vars = register_lstm(tape, &self.lstm);
        let w_out = tape.leaf(self.w_out.clone());
        let b_out = tape.leaf(self.b_out.clone());
        let hidden = self.lstm.hidden;
        let mut h = tape.leaf(Array2::zeros((1, hidden)));
        let mut c = tape.leaf(Array2::zeros((1, hidden)));
        for &row in rows {
            let (h_new, c_new) = lstm_step(tape, &vars, row, h, c);
            h = h_new;
            c = c_new;
        }
        let projected = tape.matmul(h, w_out);
        tape.add_row(projected, b_out)
    }

    pub(crate) fn steps(&self) -> usize {
        self.steps
    }

    #[cfg(test)]
    pub(crate) fn untrained_for_tests(
        vocab_size: usize,
        hidden: usize,
        steps: usize,
        seed: u64,
    ) -> RecurrentNet {
        let mut rng = seeding::stream_rng(seed, "test/recurrent");
        RecurrentNet {
            lstm: LstmParams::init(vocab_size, hidden, &mut rng),
            w_out: xavier_uniform(hidden, 1, &mut rng),
            b_out: Array2::zeros((1, 1)),
            steps,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn train(
    data: &SequenceDataset,
    params: &RecurrentParams,
    seed: u64,
) -> Result<RecurrentNet, TrainingError> {
    if params.hidden_size == 0
        || params.epochs == 0
        || params.batch_size == 0
        || params.learning_rate <= 0.0
    {
        return Err(TrainingError::InvalidHyperparams {
            reason: "hidden_size, epochs, batch_size must be nonzero; learning_rate positive"
                .into(),
        });
    }
    let steps = data.matrices[0].n_rows();
    let vocab_size = data.matrices[0].rows.ncols();
    if data
        .matrices
        .iter()
        .any(|m| m.n_rows() != steps || m.rows.ncols() != vocab_size)
    {
        return Err(TrainingError::InvalidHyperparams {
            reason: "sequence matrices have inconsistent shapes".into(),
        });
    }

    let mut init_rng = seeding::stream_rng(seed, "recurrent/init");
    let mut net = RecurrentNet {
        lstm: LstmParams::init(vocab_size, params.hidden_size, &mut init_rng),
        w_out: xavier_uniform(params.hidden_size, 1, &mut init_rng),
        b_out: Array2::zeros((1, 1)),
        steps,
    };
    let shapes: Vec<(usize, usize)> = parameter_views(&mut net)
        .iter()
        .map(|p| (p.nrows(), p.ncols()))
        .collect();
    let mut adam = Adam::new(params.learning_rate, &shapes);

    let n = data.matrices.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..params.epochs {
        let mut shuffle_rng = seeding::stream_rng(seed, &format!("recurrent/shuffle/{epoch}"));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(params.batch_size) {
            let loss = train_batch(&mut net, data, chunk, &mut adam)?;
            if !loss.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
        }
    }
    Ok(net)
}

/// One minibatch gradient step; returns the batch loss.
fn train_batch(
    net: &mut RecurrentNet,
    data: &SequenceDataset,
    batch: &[usize],
    adam: &mut Adam,
) -> Result<f64, TrainingError> {
    let batch_size = batch.len();
    let vocab_size = net.lstm.input_dim();
    let hidden = net.lstm.hidden;

    let mut tape = Tape::new();
    let lstm_vars = register_lstm(&mut tape, &net.lstm);
    let w_out = tape.leaf(net.w_out.clone());
    let b_out = tape.leaf(net.b_out.clone());

    let mut h = tape.leaf(Array2::zeros((batch_size, hidden)));
    let mut c = tape.leaf(Array2::zeros((batch_size, hidden)));
    for t in 0..net.steps {
        let mut x = Array2::zeros((batch_size, vocab_size));
        for (b, &i) in batch.iter().enumerate() {
            x.row_mut(b).assign(&data.matrices[i].rows.row(t));
        }
        let x_var = tape.leaf(x);
        let (h_new, c_new) = lstm_step(&mut tape, &lstm_vars, x_var, h, c);
        h = h_new;
        c = c_new;
    }
    let projected = tape.matmul(h, w_out);
    let logits = tape.add_row(projected, b_out);

    // Stable binary cross entropy: softplus(logit) - y * logit, averaged.
    let mut y = Array2::zeros((batch_size, 1));
    for (b, &i) in batch.iter().enumerate() {
        y[(b, 0)] = data.labels[i].index() as f64;
    }
    let y_var = tape.leaf(y);
    let softplus = tape.softplus(logits);
    let y_logit = tape.mul(y_var, logits);
    let per_instance = tape.sub(softplus, y_logit);
    let total = tape.sum_all(per_instance);
    let loss = tape.scale(total, 1.0 / batch_size as f64);

    let loss_value = tape.scalar(loss);
    let mut grads = tape.backward(loss);
    let mut gradient_arrays = vec![
        grads.take(lstm_vars.w, (net.lstm.w.nrows(), net.lstm.w.ncols())),
        grads.take(lstm_vars.u, (net.lstm.u.nrows(), net.lstm.u.ncols())),
        grads.take(lstm_vars.b, (net.lstm.b.nrows(), net.lstm.b.ncols())),
        grads.take(w_out, (net.w_out.nrows(), net.w_out.ncols())),
        grads.take(b_out, (net.b_out.nrows(), net.b_out.ncols())),
    ];
    clip_global_norm(&mut gradient_arrays, 5.0);
    let mut params = parameter_views(net);
    adam.step(&mut params, &gradient_arrays);
    Ok(loss_value)
}

fn parameter_views(net: &mut RecurrentNet) -> Vec<&mut Array2<f64>> {
    vec![
        &mut net.lstm.w,
        &mut net.lstm.u,
        &mut net.lstm.b,
        &mut net.w_out,
        &mut net.b_out,
    ]
}
