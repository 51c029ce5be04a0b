//! Adaptive moment estimation over flattened parameter vectors.

/// Adam with the usual 0.9/0.999 moment coefficients and 1e-8 epsilon.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Apply one descent step in place. Returns the L2 norm of the update.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> f64 {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let mut norm_sq = 0.0;
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            let update = self.lr * m_hat / (v_hat.sqrt() + self.eps);
            params[i] -= update;
            norm_sq += update * update;
        }
        norm_sq.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = vec![3.0, -2.0];
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..2000 {
            let grad: Vec<f64> = params.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut params, &grad);
        }
        assert!(params.iter().all(|x| x.abs() < 1e-2), "{params:?}");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![1.5, -0.5];
        let mut opt = Adam::new(0.1, 2);
        let norm = opt.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![1.5, -0.5]);
        assert_eq!(norm, 0.0);
    }
}
