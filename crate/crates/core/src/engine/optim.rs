use crate::tensor::Tensor;

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape");
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

pub fn optimizer_step(params: &mut [Tensor], grads: &[Tensor], state: &mut Adam, lr: f64) {
    state.step(params, grads, lr);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::full(&[3], 1.0)];
        let g = vec![Tensor::new(vec![3], vec![0.5, -2.0, 40.0]).unwrap()];
        let mut adam = Adam::default();
        optimizer_step(&mut p, &g, &mut adam, 0.01);
        // m_hat = g, v_hat = g^2: update = lr * g / (|g| + eps)
        let expect = [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1.0 + 0.01 * 2.0 / (2.0 + 1e-8), 1.0 - 0.01 * 40.0 / (40.0 + 1e-8)];
        for (a, b) in p[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((1.0 - p[0].data()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = vec![Tensor::full(&[2, 2], 0.3)];
        let before = p.clone();
        Adam::default().step(&mut p, &[Tensor::zeros(&[2, 2])], 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![Tensor::full(&[4], 0.2)];
            let mut adam = Adam::default();
            for i in 0..10 {
                let g = Tensor::full(&[4], (i as f64).sin());
                adam.step(&mut p, &[g], 0.05);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
