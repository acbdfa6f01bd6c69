//! Class-specific sequence manifolds learned with recurrent variational
//! autoencoders.
//!
//! One manifold is trained per outcome class on that class's prefixes. The
//! encoder is an LSTM whose final hidden state (masked to each instance's
//! true length) maps linearly to the posterior mean and log-variance; the
//! decoder is an LSTM conditioned on the latent vector through its initial
//! state, emitting per-position distributions over the sequence alphabet.
//! Training minimizes masked reconstruction negative log-likelihood plus a
//! weighted KL divergence from the standard normal prior; padded positions
//! contribute neither loss nor gradient.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoding::{
    decode_sequence, onehot_encode_activities, ActivityVocabulary, DecodedSequence, EncodingError,
    SequenceMatrix, Termination, EOS_INDEX, PAD_INDEX,
};
use crate::eventlog::{Outcome, Prefix};
use crate::nn::{
    clip_global_norm, lstm_step, lstm_step_plain, register_lstm, xavier_uniform, Adam, LstmParams,
    LstmVars, Tape, Var,
};
use crate::seeding;

/// Hyperparameters of one class VAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Latent dimensionality `r`.
    pub latent_dim: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the KL term in the loss.
    pub kl_weight: f64,
    pub batch_size: usize,
    /// Maximum prefix length the manifold encodes (sequences get one extra
    /// end-marker row).
    pub max_length: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> VaeConfig {
        VaeConfig {
            latent_dim: 8,
            hidden_size: 32,
            epochs: 30,
            learning_rate: 0.005,
            kl_weight: 1.0,
            batch_size: 64,
            max_length: 10,
            seed: 0,
        }
    }
}

/// Posterior coordinates of one sequence on a manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub mu: Vec<f64>,
    /// Posterior standard deviations (strictly positive).
    pub sigma: Vec<f64>,
}

/// `z = mu + eps * sigma`, elementwise and exact: a zero `eps` returns `mu`
/// bit for bit.
pub fn reparameterize(point: &LatentPoint, eps: &[f64]) -> Vec<f64> {
    debug_assert_eq!(point.mu.len(), eps.len());
    point
        .mu
        .iter()
        .zip(point.sigma.iter())
        .zip(eps.iter())
        .map(|((&mu, &sigma), &e)| mu + e * sigma)
        .collect()
}

/// KL divergence of a diagonal Gaussian from the standard normal prior:
/// `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)`. Zero exactly when the
/// posterior equals the prior.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), sigma.len());
    0.5 * mu
        .iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| {
            let var = s * s;
            m * m + var - 1.0 - var.ln()
        })
        .sum::<f64>()
}

/// Masked reconstruction negative log-likelihood: the summed negative log
/// probability of each target symbol over the valid (unpadded) rows.
pub fn masked_nll(probability_rows: &Array2<f64>, target: &SequenceMatrix) -> f64 {
    let mut total = 0.0;
    for (t, row) in target.rows.rows().into_iter().enumerate() {
        if !target.mask[t] {
            continue;
        }
        let symbol = crate::encoding::argmax_lowest(row.as_slice().expect("one-hot rows"));
        total -= probability_rows[(t, symbol)].max(f64::MIN_POSITIVE).ln();
    }
    total
}

/// Per-epoch mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub nll: f64,
    pub kl: f64,
}

impl EpochLoss {
    /// Total loss under the manifold's KL weight.
    pub fn total(&self, kl_weight: f64) -> f64 {
        self.nll + kl_weight * self.kl
    }
}

/// Errors raised while training or using a manifold.
#[derive(Debug, thiserror::Error)]
pub enum ManifoldError {
    #[error("no prefixes provided for class {label}")]
    EmptyClass { label: Outcome },
    #[error("prefix of case {case_id:?} has label {found}, expected {expected}")]
    MixedLabels { case_id: String, found: Outcome, expected: Outcome },
    #[error("invalid configuration: {reason}")]
    BadConfig { reason: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("latent vector has {got} dimensions, manifold expects {expected}")]
    LatentDimension { got: usize, expected: usize },
}

/// Encoder half: LSTM plus linear heads for the posterior mean and
/// log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SequenceEncoder {
    pub lstm: LstmParams,
    pub w_mu: Array2<f64>,
    pub b_mu: Array2<f64>,
    pub w_logvar: Array2<f64>,
    pub b_logvar: Array2<f64>,
}

/// Decoder half: latent-to-initial-state maps, LSTM and output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SequenceDecoder {
    pub w_zh: Array2<f64>,
    pub b_zh: Array2<f64>,
    pub w_zc: Array2<f64>,
    pub b_zc: Array2<f64>,
    pub lstm: LstmParams,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
}

/// A trained class manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassManifold {
    pub label: Outcome,
    pub config: VaeConfig,
    /// Fingerprint of the vocabulary the manifold was trained against.
    pub vocab_fingerprint: u64,
    pub(crate) encoder: SequenceEncoder,
    pub(crate) decoder: SequenceDecoder,
    /// Mean (NLL, KL) per epoch, in training order.
    pub training_curve: Vec<EpochLoss>,
}

// ---------------------------------------------------------------------------
// tape-side building blocks
// ---------------------------------------------------------------------------

pub(crate) struct EncoderVars {
    lstm: LstmVars,
    w_mu: Var,
    b_mu: Var,
    w_logvar: Var,
    b_logvar: Var,
}

pub(crate) struct DecoderVars {
    w_zh: Var,
    b_zh: Var,
    w_zc: Var,
    b_zc: Var,
    lstm: LstmVars,
    w_out: Var,
    b_out: Var,
}

impl SequenceEncoder {
    pub(crate) fn init(vocab_size: usize, hidden: usize, latent: usize, rng: &mut impl Rng) -> SequenceEncoder {
        SequenceEncoder {
            lstm: LstmParams::init(vocab_size, hidden, rng),
            w_mu: xavier_uniform(hidden, latent, rng),
            b_mu: Array2::zeros((1, latent)),
            w_logvar: xavier_uniform(hidden, latent, rng),
            b_logvar: Array2::zeros((1, latent)),
        }
    }

    pub(crate) fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            lstm: register_lstm(tape, &self.lstm),
            w_mu: tape.leaf(self.w_mu.clone()),
            b_mu: tape.leaf(self.b_mu.clone()),
            w_logvar: tape.leaf(self.w_logvar.clone()),
            b_logvar: tape.leaf(self.b_logvar.clone()),
        }
    }

    /// Differentiable masked forward pass over a batch: returns
    /// `(mu, logvar)`, each `(batch, latent)`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        batch: &[&SequenceMatrix],
    ) -> (Var, Var) {
        let batch_size = batch.len();
        let hidden = self.lstm.hidden;
        let steps = batch[0].n_rows();
        let mut h = tape.leaf(Array2::zeros((batch_size, hidden)));
        let mut c = tape.leaf(Array2::zeros((batch_size, hidden)));
        for t in 0..steps {
            let x = tape.leaf(step_inputs(batch, t));
            let (h_new, c_new) = lstm_step(tape, &vars.lstm, x, h, c);
            // Masked update: instances past their end keep their state.
            let mask = tape.leaf(step_masks(batch, t));
            let inverse = tape.affine(mask, -1.0, 1.0);
            let h_kept = tape.mul_col(h, inverse);
            let h_updated = tape.mul_col(h_new, mask);
            h = tape.add(h_updated, h_kept);
            let c_kept = tape.mul_col(c, inverse);
            let c_updated = tape.mul_col(c_new, mask);
            c = tape.add(c_updated, c_kept);
        }
        let mu_lin = tape.matmul(h, vars.w_mu);
        let mu = tape.add_row(mu_lin, vars.b_mu);
        let logvar_lin = tape.matmul(h, vars.w_logvar);
        let logvar = tape.add_row(logvar_lin, vars.b_logvar);
        (mu, logvar)
    }

    /// Inference-only forward pass for one instance.
    fn forward_plain(&self, matrix: &SequenceMatrix) -> (Vec<f64>, Vec<f64>) {
        let hidden = self.lstm.hidden;
        let mut h = Array2::zeros((1, hidden));
        let mut c = Array2::zeros((1, hidden));
        // The mask is a step function, so stopping at the last valid row is
        // equivalent to masked blending over all rows.
        for t in 0..matrix.valid_length {
            let x = matrix.rows.row(t).insert_axis(Axis(0)).to_owned();
            let (h_new, c_new) = lstm_step_plain(&self.lstm, &x, &h, &c);
            h = h_new;
            c = c_new;
        }
        let mu = h.dot(&self.w_mu) + &self.b_mu;
        let logvar = h.dot(&self.w_logvar) + &self.b_logvar;
        (mu.row(0).to_vec(), logvar.row(0).to_vec())
    }
}

impl SequenceDecoder {
    pub(crate) fn init(vocab_size: usize, hidden: usize, latent: usize, rng: &mut impl Rng) -> SequenceDecoder {
        SequenceDecoder {
            w_zh: xavier_uniform(latent, hidden, rng),
            b_zh: Array2::zeros((1, hidden)),
            w_zc: xavier_uniform(latent, hidden, rng),
            b_zc: Array2::zeros((1, hidden)),
            lstm: LstmParams::init(vocab_size, hidden, rng),
            w_out: xavier_uniform(hidden, vocab_size, rng),
            b_out: Array2::zeros((1, vocab_size)),
        }
    }

    pub(crate) fn register(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            w_zh: tape.leaf(self.w_zh.clone()),
            b_zh: tape.leaf(self.b_zh.clone()),
            w_zc: tape.leaf(self.w_zc.clone()),
            b_zc: tape.leaf(self.b_zc.clone()),
            lstm: register_lstm(tape, &self.lstm),
            w_out: tape.leaf(self.w_out.clone()),
            b_out: tape.leaf(self.b_out.clone()),
        }
    }

    fn initial_state(&self, tape: &mut Tape, vars: &DecoderVars, z: Var) -> (Var, Var) {
        let h_lin = tape.matmul(z, vars.w_zh);
        let h_shift = tape.add_row(h_lin, vars.b_zh);
        let h0 = tape.tanh(h_shift);
        let c_lin = tape.matmul(z, vars.w_zc);
        let c_shift = tape.add_row(c_lin, vars.b_zc);
        let c0 = tape.tanh(c_shift);
        (h0, c0)
    }

    /// Teacher-forced reconstruction loss over a batch, summed over
    /// instances: `-sum log p(target_t)` over valid rows. The first input
    /// is the padding symbol acting as start token; later inputs are the
    /// ground-truth previous rows.
    pub(crate) fn nll(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        z: Var,
        batch: &[&SequenceMatrix],
        vocab_size: usize,
    ) -> Var {
        let batch_size = batch.len();
        let steps = batch[0].n_rows();
        let (mut h, mut c) = self.initial_state(tape, vars, z);
        let mut x = tape.leaf(start_rows(batch_size, vocab_size));
        let mut total: Option<Var> = None;
        for t in 0..steps {
            let (h_new, c_new) = lstm_step(tape, &vars.lstm, x, h, c);
            h = h_new;
            c = c_new;
            let logits_lin = tape.matmul(h, vars.w_out);
            let logits = tape.add_row(logits_lin, vars.b_out);
            let log_probs = tape.log_softmax_rows(logits);
            let target = tape.leaf(step_inputs(batch, t));
            let picked = tape.mul(target, log_probs);
            let mask = tape.leaf(step_masks(batch, t));
            let masked = tape.mul_col(picked, mask);
            let partial = tape.sum_all(masked);
            total = Some(match total {
                Some(acc) => tape.add(acc, partial),
                None => partial,
            });
            // Teacher forcing: next input is the ground-truth current row.
            x = target;
        }
        let summed = total.expect("at least one step");
        tape.scale(summed, -1.0)
    }

    /// Differentiable free-running unroll from `z` (batch of one): each
    /// step feeds the previous step's softmax back in. Returns the softmax
    /// row of every step.
    pub(crate) fn unroll_soft(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        z: Var,
        steps: usize,
        vocab_size: usize,
    ) -> Vec<Var> {
        let (mut h, mut c) = self.initial_state(tape, vars, z);
        let mut x = tape.leaf(start_rows(1, vocab_size));
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (h_new, c_new) = lstm_step(tape, &vars.lstm, x, h, c);
            h = h_new;
            c = c_new;
            let logits_lin = tape.matmul(h, vars.w_out);
            let logits = tape.add_row(logits_lin, vars.b_out);
            let probs = tape.softmax_rows(logits);
            rows.push(probs);
            x = probs;
        }
        rows
    }

    /// Greedy autoregressive decode: argmax feedback, stopping once an end
    /// or padding symbol is emitted. Returns the emitted probability rows.
    fn decode_greedy_plain(&self, z: &[f64], max_steps: usize) -> Array2<f64> {
        let vocab_size = self.w_out.ncols();
        let z_mat = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("latent row");
        let mut h = (z_mat.dot(&self.w_zh) + &self.b_zh).mapv(f64::tanh);
        let mut c = (z_mat.dot(&self.w_zc) + &self.b_zc).mapv(f64::tanh);
        let mut x = start_rows(1, vocab_size);
        let mut rows = Vec::new();
        for _ in 0..max_steps {
            let (h_new, c_new) = lstm_step_plain(&self.lstm, &x, &h, &c);
            h = h_new;
            c = c_new;
            let logits = h.dot(&self.w_out) + &self.b_out;
            let probs = softmax_row(&logits);
            let symbol = crate::encoding::argmax_lowest(probs.row(0).as_slice().expect("row"));
            rows.push(probs.row(0).to_vec());
            if symbol == EOS_INDEX || symbol == PAD_INDEX {
                break;
            }
            let mut next = Array2::zeros((1, vocab_size));
            next[(0, symbol)] = 1.0;
            x = next;
        }
        let n_rows = rows.len();
        Array2::from_shape_vec((n_rows, vocab_size), rows.concat()).expect("prob rows")
    }
}

fn softmax_row(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row `t` of every instance, stacked to `(batch, vocab)`.
fn step_inputs(batch: &[&SequenceMatrix], t: usize) -> Array2<f64> {
    let vocab_size = batch[0].rows.ncols();
    let mut out = Array2::zeros((batch.len(), vocab_size));
    for (i, instance) in batch.iter().enumerate() {
        out.row_mut(i).assign(&instance.rows.row(t));
    }
    out
}

/// Mask bit of row `t` per instance, as a `(batch, 1)` column.
fn step_masks(batch: &[&SequenceMatrix], t: usize) -> Array2<f64> {
    let mut out = Array2::zeros((batch.len(), 1));
    for (i, instance) in batch.iter().enumerate() {
        out[(i, 0)] = if instance.mask[t] { 1.0 } else { 0.0 };
    }
    out
}

/// Start-token rows: the padding symbol, one-hot.
fn start_rows(batch_size: usize, vocab_size: usize) -> Array2<f64> {
    let mut out = Array2::zeros((batch_size, vocab_size));
    for i in 0..batch_size {
        out[(i, PAD_INDEX)] = 1.0;
    }
    out
}

/// KL of the batch posterior from the prior, summed over instances.
fn kl_node(tape: &mut Tape, mu: Var, logvar: Var) -> Var {
    let mu_sq = tape.mul(mu, mu);
    let var = tape.exp(logvar);
    let sum_terms = tape.add(mu_sq, var);
    let minus_logvar = tape.sub(sum_terms, logvar);
    let shifted = tape.affine(minus_logvar, 1.0, -1.0);
    let total = tape.sum_all(shifted);
    tape.scale(total, 0.5)
}

// ---------------------------------------------------------------------------
// training and inference
// ---------------------------------------------------------------------------

/// Trains the VAE of one outcome class on that class's prefixes.
///
/// All prefixes must carry `label`; identical inputs, config and seed yield
/// an identical manifold including its training curve.
pub fn train_class_vae(
    prefixes: &[Prefix],
    label: Outcome,
    vocab: &ActivityVocabulary,
    config: &VaeConfig,
) -> Result<ClassManifold, ManifoldError> {
    if prefixes.is_empty() {
        return Err(ManifoldError::EmptyClass { label });
    }
    for prefix in prefixes {
        if prefix.label != label {
            return Err(ManifoldError::MixedLabels {
                case_id: prefix.case_id.clone(),
                found: prefix.label,
                expected: label,
            });
        }
    }
    validate_config(config, vocab)?;

    let mut init_rng = seeding::stream_rng(config.seed, "vae/init");
    let mut encoder = SequenceEncoder::init(vocab.size(), config.hidden_size, config.latent_dim, &mut init_rng);
    let mut decoder = SequenceDecoder::init(vocab.size(), config.hidden_size, config.latent_dim, &mut init_rng);

    let matrices: Vec<SequenceMatrix> = prefixes
        .iter()
        .map(|p| onehot_encode_activities(&p.activities, vocab, config.max_length))
        .collect::<Result<_, _>>()?;

    let shapes = param_shapes(&encoder, &decoder);
    let mut adam = Adam::new(config.learning_rate, &shapes);
    let mut curve = Vec::with_capacity(config.epochs);
    let n = matrices.len();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = seeding::stream_rng(config.seed, &format!("vae/shuffle/{epoch}"));
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut eps_rng = seeding::stream_rng(config.seed, &format!("vae/eps/{epoch}"));

        let mut epoch_nll = 0.0;
        let mut epoch_kl = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SequenceMatrix> = chunk.iter().map(|&i| &matrices[i]).collect();
            let batch_size = batch.len();

            let mut tape = Tape::new();
            let enc_vars = encoder.register(&mut tape);
            let dec_vars = decoder.register(&mut tape);

            let (mu, logvar) = encoder.forward(&mut tape, &enc_vars, &batch);
            // z = mu + eps * exp(logvar / 2)
            let eps_values = Array2::from_shape_fn((batch_size, config.latent_dim), |_| {
                StandardNormal.sample(&mut eps_rng)
            });
            let eps = tape.leaf(eps_values);
            let half_logvar = tape.scale(logvar, 0.5);
            let sigma = tape.exp(half_logvar);
            let noise = tape.mul(eps, sigma);
            let z = tape.add(mu, noise);

            let nll_sum = decoder.nll(&mut tape, &dec_vars, z, &batch, vocab.size());
            let kl_sum = kl_node(&mut tape, mu, logvar);
            let nll_mean = tape.scale(nll_sum, 1.0 / batch_size as f64);
            let kl_mean = tape.scale(kl_sum, 1.0 / batch_size as f64);
            let weighted_kl = tape.scale(kl_mean, config.kl_weight);
            let loss = tape.add(nll_mean, weighted_kl);

            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(ManifoldError::Diverged { epoch });
            }
            epoch_nll += tape.scalar(nll_sum);
            epoch_kl += tape.scalar(kl_sum);

            let grads_all = tape.backward(loss);
            let mut grads = collect_grads(grads_all, &enc_vars, &dec_vars, &shapes);
            clip_global_norm(&mut grads, 5.0);
            let mut params = param_refs(&mut encoder, &mut decoder);
            adam.step(&mut params, &grads);
        }
        curve.push(EpochLoss { nll: epoch_nll / n as f64, kl: epoch_kl / n as f64 });
    }

    Ok(ClassManifold {
        label,
        config: config.clone(),
        vocab_fingerprint: vocab.fingerprint(),
        encoder,
        decoder,
        training_curve: curve,
    })
}

fn validate_config(config: &VaeConfig, vocab: &ActivityVocabulary) -> Result<(), ManifoldError> {
    let flattened = (config.max_length + 1) * vocab.size();
    if config.latent_dim == 0 {
        return Err(ManifoldError::BadConfig { reason: "latent_dim must be at least 1".into() });
    }
    if config.latent_dim > flattened {
        return Err(ManifoldError::BadConfig {
            reason: format!(
                "latent_dim {} exceeds the flattened input dimension {flattened}",
                config.latent_dim
            ),
        });
    }
    if config.hidden_size == 0 || config.epochs == 0 || config.batch_size == 0 {
        return Err(ManifoldError::BadConfig {
            reason: "hidden_size, epochs and batch_size must be positive".into(),
        });
    }
    if !(config.learning_rate > 0.0) || !(config.kl_weight >= 0.0) {
        return Err(ManifoldError::BadConfig {
            reason: "learning_rate must be positive and kl_weight non-negative".into(),
        });
    }
    if config.max_length == 0 {
        return Err(ManifoldError::BadConfig { reason: "max_length must be positive".into() });
    }
    Ok(())
}

fn param_shapes(encoder: &SequenceEncoder, decoder: &SequenceDecoder) -> Vec<(usize, usize)> {
    [
        encoder.lstm.w.dim(),
        encoder.lstm.u.dim(),
        encoder.lstm.b.dim(),
        encoder.w_mu.dim(),
        encoder.b_mu.dim(),
        encoder.w_logvar.dim(),
        encoder.b_logvar.dim(),
        decoder.w_zh.dim(),
        decoder.b_zh.dim(),
        decoder.w_zc.dim(),
        decoder.b_zc.dim(),
        decoder.lstm.w.dim(),
        decoder.lstm.u.dim(),
        decoder.lstm.b.dim(),
        decoder.w_out.dim(),
        decoder.b_out.dim(),
    ]
    .to_vec()
}

fn collect_grads(
    mut grads: crate::nn::Gradients,
    enc: &EncoderVars,
    dec: &DecoderVars,
    shapes: &[(usize, usize)],
) -> Vec<Array2<f64>> {
    let vars = [
        enc.lstm.w,
        enc.lstm.u,
        enc.lstm.b,
        enc.w_mu,
        enc.b_mu,
        enc.w_logvar,
        enc.b_logvar,
        dec.w_zh,
        dec.b_zh,
        dec.w_zc,
        dec.b_zc,
        dec.lstm.w,
        dec.lstm.u,
        dec.lstm.b,
        dec.w_out,
        dec.b_out,
    ];
    vars.iter().zip(shapes.iter()).map(|(&v, &shape)| grads.take(v, shape)).collect()
}

fn param_refs<'a>(
    encoder: &'a mut SequenceEncoder,
    decoder: &'a mut SequenceDecoder,
) -> Vec<&'a mut Array2<f64>> {
    vec![
        &mut encoder.lstm.w,
        &mut encoder.lstm.u,
        &mut encoder.lstm.b,
        &mut encoder.w_mu,
        &mut encoder.b_mu,
        &mut encoder.w_logvar,
        &mut encoder.b_logvar,
        &mut decoder.w_zh,
        &mut decoder.b_zh,
        &mut decoder.w_zc,
        &mut decoder.b_zc,
        &mut decoder.lstm.w,
        &mut decoder.lstm.u,
        &mut decoder.lstm.b,
        &mut decoder.w_out,
        &mut decoder.b_out,
    ]
}

impl ClassManifold {
    /// Latent dimensionality of the manifold.
    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Registers the decoder on `tape` and returns the softmax row of every
    /// decode step of the soft (probability-feedback) unroll from the
    /// latent tape node `z`. This is the differentiable decode path that
    /// latent-space gradient attacks chain into a classifier.
    pub(crate) fn unroll_soft_for_attack(&self, tape: &mut Tape, z: Var) -> Vec<Var> {
        let vars = self.decoder.register(tape);
        let vocab_size = self.decoder.w_out.ncols();
        self.decoder.unroll_soft(tape, &vars, z, self.config.max_length + 1, vocab_size)
    }

    /// Posterior coordinates of an activity sequence.
    pub fn encode_activities(
        &self,
        activities: &[String],
        vocab: &ActivityVocabulary,
    ) -> Result<LatentPoint, ManifoldError> {
        let matrix = onehot_encode_activities(activities, vocab, self.config.max_length)?;
        let (mu, logvar) = self.encoder.forward_plain(&matrix);
        let sigma = logvar.iter().map(|&lv| (0.5 * lv).exp()).collect();
        Ok(LatentPoint { mu, sigma })
    }

    /// Posterior coordinates of a prefix.
    pub fn encode(&self, prefix: &Prefix, vocab: &ActivityVocabulary) -> Result<LatentPoint, ManifoldError> {
        self.encode_activities(&prefix.activities, vocab)
    }

    /// Greedily decodes a latent vector to an activity sequence. The result
    /// never exceeds the manifold's maximum prefix length; a decode that
    /// fails to emit an end marker within budget is truncated and flagged.
    pub fn decode(&self, z: &[f64], vocab: &ActivityVocabulary) -> Result<DecodedSequence, ManifoldError> {
        if z.len() != self.config.latent_dim {
            return Err(ManifoldError::LatentDimension { got: z.len(), expected: self.config.latent_dim });
        }
        let rows = self.decoder.decode_greedy_plain(z, self.config.max_length + 1);
        let mut decoded = decode_sequence(&rows, vocab)?;
        if decoded.termination == Termination::Unterminated
            && decoded.activities.len() > self.config.max_length
        {
            decoded.activities.truncate(self.config.max_length);
        }
        Ok(decoded)
    }

    /// Mean (NLL, KL) of a prefix batch under the deterministic posterior
    /// (`z = mu`), with teacher forcing for the reconstruction term.
    pub fn elbo_components(
        &self,
        prefixes: &[Prefix],
        vocab: &ActivityVocabulary,
    ) -> Result<(f64, f64), ManifoldError> {
        if prefixes.is_empty() {
            return Err(ManifoldError::EmptyClass { label: self.label });
        }
        let mut total_nll = 0.0;
        let mut total_kl = 0.0;
        for prefix in prefixes {
            let matrix = onehot_encode_activities(&prefix.activities, vocab, self.config.max_length)?;
            let (mu, logvar) = self.encoder.forward_plain(&matrix);
            let sigma: Vec<f64> = logvar.iter().map(|&lv| (0.5 * lv).exp()).collect();
            total_kl += gaussian_kl(&mu, &sigma);
            let rows = self.teacher_forced_rows(&mu, &matrix);
            total_nll += masked_nll(&rows, &matrix);
        }
        let n = prefixes.len() as f64;
        Ok((total_nll / n, total_kl / n))
    }

    /// Fraction of prefixes whose mean-path decode reproduces them exactly.
    pub fn reconstruction_rate(
        &self,
        prefixes: &[Prefix],
        vocab: &ActivityVocabulary,
    ) -> Result<f64, ManifoldError> {
        if prefixes.is_empty() {
            return Err(ManifoldError::EmptyClass { label: self.label });
        }
        let mut exact = 0usize;
        for prefix in prefixes {
            let point = self.encode(prefix, vocab)?;
            let decoded = self.decode(&point.mu, vocab)?;
            if decoded.termination == Termination::EndOfSequence
                && decoded.activities == prefix.activities
            {
                exact += 1;
            }
        }
        Ok(exact as f64 / prefixes.len() as f64)
    }

    /// Probability rows of a teacher-forced decode from `z` (for ELBO
    /// evaluation).
    fn teacher_forced_rows(&self, z: &[f64], target: &SequenceMatrix) -> Array2<f64> {
        let vocab_size = self.decoder.w_out.ncols();
        let z_mat = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("latent row");
        let mut h = (z_mat.dot(&self.decoder.w_zh) + &self.decoder.b_zh).mapv(f64::tanh);
        let mut c = (z_mat.dot(&self.decoder.w_zc) + &self.decoder.b_zc).mapv(f64::tanh);
        let mut x = start_rows(1, vocab_size);
        let steps = target.n_rows();
        let mut rows = Array2::zeros((steps, vocab_size));
        for t in 0..steps {
            let (h_new, c_new) = lstm_step_plain(&self.decoder.lstm, &x, &h, &c);
            h = h_new;
            c = c_new;
            let logits = h.dot(&self.decoder.w_out) + &self.decoder.b_out;
            let probs = softmax_row(&logits);
            rows.row_mut(t).assign(&probs.row(0));
            x = target.rows.row(t).insert_axis(Axis(0)).to_owned();
        }
        rows
    }
}

#[cfg(test)]
impl ClassManifold {
    /// An untrained manifold with random weights; enough for tests that
    /// only exercise the encode/decode plumbing, not reconstruction.
    pub(crate) fn untrained_for_tests(vocab_size: usize, config: VaeConfig, seed: u64) -> ClassManifold {
        let mut rng = crate::seeding::stream_rng(seed, "test/manifold-init");
        ClassManifold {
            label: Outcome::Negative,
            vocab_fingerprint: 0,
            encoder: SequenceEncoder::init(vocab_size, config.hidden_size, config.latent_dim, &mut rng),
            decoder: SequenceDecoder::init(vocab_size, config.hidden_size, config.latent_dim, &mut rng),
            training_curve: Vec::new(),
            config,
        }
    }
}
