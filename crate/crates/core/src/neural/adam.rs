use super::{Gradients, NetworkParams, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state for one network, bias-corrected.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    steps: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &NetworkParams<F>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<F>> = params
            .trainable()
            .iter()
            .map(|t| vec![F::zero(); t.len()])
            .collect();
        Self {
            config,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut NetworkParams<F>, grads: &Gradients<F>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let b1 = F::lit(c.beta1);
        let b2 = F::lit(c.beta2);
        let one = F::one();
        let correct1 = one - F::lit(c.beta1.powi(t));
        let correct2 = one - F::lit(c.beta2.powi(t));
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.epsilon);
        for (((tensor, g), m), v) in params
            .trainable_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, &gi), mi), vi) in tensor.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / correct1;
                let v_hat = *vi / correct2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
