/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One descent step of size `lr` on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0];
        adam.step(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        let target = [1.0, -3.0, 0.5];
        let mut p = [0.0; 3];
        for k in 0..2000 {
            let g: Vec<f64> = (0..3).map(|i| 2.0 * (p[i] - target[i])).collect();
            let lr = 0.05 * (1.0 - k as f64 / 2000.0) + 1e-4;
            adam.step(&mut p, &g, lr);
        }
        for i in 0..3 {
            assert!((p[i] - target[i]).abs() < 1e-2, "{p:?}");
        }
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p = [4.0];
        adam.step(&mut p, &[0.0], 1.0);
        assert_eq!(p[0], 4.0);
    }
}
