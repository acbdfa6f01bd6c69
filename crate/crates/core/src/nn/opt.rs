//! Adam optimizer and gradient clipping.

use ndarray::Array2;

/// Adam with bias correction. One instance owns the moment estimates for a
/// fixed list of parameter matrices, identified by position.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moments: Vec<Array2<f64>>,
    second_moments: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, shapes: &[(usize, usize)]) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moments: shapes.iter().map(|&dim| Array2::zeros(dim)).collect(),
            second_moments: shapes.iter().map(|&dim| Array2::zeros(dim)).collect(),
        }
    }

    /// Applies one update. `params` and `grads` must match the shapes the
    /// optimizer was built with, in the same order.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.first_moments.len());
        assert_eq!(grads.len(), self.first_moments.len());
        self.step_count += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moments.iter_mut().zip(self.second_moments.iter_mut()))
        {
            m.zip_mut_with(grad, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(grad, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let lr = self.learning_rate;
            let eps = self.epsilon;
            ndarray::Zip::from(&mut **param).and(&*m).and(&*v).for_each(|p, &mi, &vi| {
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// Scales all gradients down so their joint L2 norm does not exceed
/// `max_norm`. No-op when already within bounds.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) {
    let total: f64 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for grad in grads.iter_mut() {
            grad.mapv_inplace(|v| v * scale);
        }
    }
}
