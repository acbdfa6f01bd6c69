//! LSTM cell: parameters, tape-based step and plain inference step.
//!
//! Gates are computed as `gates = x W + h U + b` with the column blocks
//! ordered input / forget / cell / output. The forget-gate bias starts at 1
//! so early training does not erase state.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::xavier_uniform;

/// Weights of one LSTM cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// Input projection, `(input_dim, 4 * hidden)`.
    pub w: Array2<f64>,
    /// Recurrent projection, `(hidden, 4 * hidden)`.
    pub u: Array2<f64>,
    /// Bias row, `(1, 4 * hidden)`.
    pub b: Array2<f64>,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> LstmParams {
        let w = xavier_uniform(input_dim, 4 * hidden, rng);
        let u = xavier_uniform(hidden, 4 * hidden, rng);
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        LstmParams { w, u, b, hidden }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Tape handles for registered LSTM parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

/// Registers the cell's parameters as tape leaves.
pub fn register_lstm(tape: &mut Tape, params: &LstmParams) -> LstmVars {
    LstmVars {
        w: tape.leaf(params.w.clone()),
        u: tape.leaf(params.u.clone()),
        b: tape.leaf(params.b.clone()),
        hidden: params.hidden,
    }
}

/// One differentiable LSTM step over a batch: `x` is `(batch, input_dim)`,
/// `h` and `c` are `(batch, hidden)`. Returns the new `(h, c)`.
pub fn lstm_step(tape: &mut Tape, vars: &LstmVars, x: Var, h: Var, c: Var) -> (Var, Var) {
    let hidden = vars.hidden;
    let from_input = tape.matmul(x, vars.w);
    let from_state = tape.matmul(h, vars.u);
    let pre = tape.add(from_input, from_state);
    let gates = tape.add_row(pre, vars.b);

    let input_pre = tape.slice_cols(gates, 0, hidden);
    let forget_pre = tape.slice_cols(gates, hidden, 2 * hidden);
    let cell_pre = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
    let output_pre = tape.slice_cols(gates, 3 * hidden, 4 * hidden);

    let input_gate = tape.sigmoid(input_pre);
    let forget_gate = tape.sigmoid(forget_pre);
    let cell_candidate = tape.tanh(cell_pre);
    let output_gate = tape.sigmoid(output_pre);

    let kept = tape.mul(forget_gate, c);
    let written = tape.mul(input_gate, cell_candidate);
    let c_next = tape.add(kept, written);
    let c_squashed = tape.tanh(c_next);
    let h_next = tape.mul(output_gate, c_squashed);
    (h_next, c_next)
}

/// Inference-only LSTM step; mirrors [`lstm_step`] without building a graph.
pub fn lstm_step_plain(
    params: &LstmParams,
    x: &Array2<f64>,
    h: &Array2<f64>,
    c: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let hidden = params.hidden;
    let gates = x.dot(&params.w) + h.dot(&params.u) + &params.b;
    let sigmoid = |v: f64| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    };
    let input_gate = gates.slice(s![.., 0..hidden]).mapv(sigmoid);
    let forget_gate = gates.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
    let cell_candidate = gates.slice(s![.., 2 * hidden..3 * hidden]).mapv(f64::tanh);
    let output_gate = gates.slice(s![.., 3 * hidden..4 * hidden]).mapv(sigmoid);
    let c_next = &forget_gate * c + &input_gate * &cell_candidate;
    let h_next = &output_gate * &c_next.mapv(f64::tanh);
    (h_next, c_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_plain_steps_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = LstmParams::init(3, 4, &mut rng);
        let x = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let h = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-0.5..0.5));
        let c = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-0.5..0.5));

        let (h_plain, c_plain) = lstm_step_plain(&params, &x, &h, &c);

        let mut tape = Tape::new();
        let vars = register_lstm(&mut tape, &params);
        let xv = tape.leaf(x);
        let hv = tape.leaf(h);
        let cv = tape.leaf(c);
        let (h_tape, c_tape) = lstm_step(&mut tape, &vars, xv, hv, cv);

        let dh = (tape.value(h_tape) - &h_plain).mapv(f64::abs);
        let dc = (tape.value(c_tape) - &c_plain).mapv(f64::abs);
        assert!(dh.iter().all(|&v| v < 1e-12));
        assert!(dc.iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = LstmParams::init(2, 3, &mut rng);
        let x0 = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0));
        let x1 = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0));

        let build = |tape: &mut Tape, inputs: &[Var]| {
            let vars = LstmVars { w: inputs[0], u: inputs[1], b: inputs[2], hidden: 3 };
            let h0 = tape.leaf(Array2::zeros((2, 3)));
            let c0 = tape.leaf(Array2::zeros((2, 3)));
            let (h1, c1) = lstm_step(tape, &vars, inputs[3], h0, c0);
            let (h2, _) = lstm_step(tape, &vars, inputs[4], h1, c1);
            tape.sum_all(h2)
        };
        let inputs =
            vec![params.w.clone(), params.u.clone(), params.b.clone(), x0.clone(), x1.clone()];

        // Analytic gradients.
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);

        // Central differences on every coordinate of every input.
        let step = 1e-5;
        for (i, base) in inputs.iter().enumerate() {
            let grad = grads.get(vars[i]).expect("all inputs influence the loss");
            for r in 0..base.nrows() {
                for col in 0..base.ncols() {
                    let eval = |delta: f64| {
                        let mut shifted = inputs.clone();
                        shifted[i][(r, col)] += delta;
                        let mut t = Tape::new();
                        let vs: Vec<Var> = shifted.iter().map(|m| t.leaf(m.clone())).collect();
                        let l = build(&mut t, &vs);
                        t.scalar(l)
                    };
                    let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                    let analytic = grad[(r, col)];
                    let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        (numeric - analytic).abs() / denom < 1e-4,
                        "input {i} ({r},{col}): numeric {numeric} vs analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn forget_bias_starts_open() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = LstmParams::init(2, 3, &mut rng);
        for j in 3..6 {
            assert_eq!(params.b[(0, j)], 1.0);
        }
        assert_eq!(params.b[(0, 0)], 0.0);
    }
}
