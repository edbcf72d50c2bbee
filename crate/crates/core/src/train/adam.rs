//! Adam with bias correction, canonical hyperparameters.

/// Optimizer state: first/second moments per parameter slot, plus the
/// step counter driving bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// One moment buffer per parameter tensor, in canonical order.
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all slots. `pairs` must match the construction
    /// order; each pair is (parameter data, gradient data).
    pub fn step(&mut self, lr: f64, pairs: Vec<(&mut [f64], &[f64])>) {
        assert_eq!(pairs.len(), self.m.len(), "slot count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (param, grad)) in pairs.into_iter().enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            assert_eq!(param.len(), m.len(), "slot {slot} size mismatch");
            assert_eq!(grad.len(), m.len(), "slot {slot} gradient size mismatch");
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        state.step(1e-3, vec![(&mut p[..], &g[..])]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let lr = 1e-3;
        let mut state = AdamState::new(&[2]);
        let mut p = vec![0.0, 0.0];
        let g = vec![0.25, -7.0];
        state.step(lr, vec![(&mut p[..], &g[..])]);
        assert!((p[0] - (-lr)).abs() < 1e-9, "{}", p[0]);
        assert!((p[1] - lr).abs() < 1e-9, "{}", p[1]);
    }

    #[test]
    fn second_step_matches_hand_computation() {
        let lr = 0.01;
        let mut state = AdamState::new(&[1]);
        let mut p = vec![1.0];
        let g1 = 0.5;
        let g2 = -0.25;
        state.step(lr, vec![(&mut p[..], &[g1][..])]);
        state.step(lr, vec![(&mut p[..], &[g2][..])]);

        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut expect = 1.0;
        for (t, g) in [(1, g1), (2, g2)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t));
            let v_hat = v / (1.0 - b1_pow(b2, t));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((p[0] - expect).abs() < 1e-12);

        fn b1_pow(b: f64, t: i32) -> f64 {
            b.powi(t)
        }
    }

    #[test]
    fn identical_sequences_give_identical_trajectories() {
        let run = || {
            let mut state = AdamState::new(&[2]);
            let mut p = vec![0.3, -0.3];
            for k in 0..50 {
                let g = vec![(k as f64 * 0.1).sin(), (k as f64 * 0.2).cos()];
                state.step(1e-2, vec![(&mut p[..], &g[..])]);
            }
            (p[0].to_bits(), p[1].to_bits())
        };
        assert_eq!(run(), run());
    }
}
