use crate::models::ModelParams;

/// Adam with bias correction, operating on every tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.named_tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let lr = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        let grads = grads.named_tensors();
        for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * *m / (v.sqrt() + eps);
            }
        }
    }
}

pub fn global_norm(grads: &ModelParams<f32>) -> f64 {
    grads
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|g| (*g as f64) * (*g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescale to `max_norm` if the global norm exceeds it. Returns whether it did.
pub fn clip_global_norm(grads: &mut ModelParams<f32>, max_norm: f64) -> bool {
    let norm = global_norm(grads);
    if norm <= max_norm || !norm.is_finite() {
        return false;
    }
    let s = (max_norm / norm) as f32;
    for t in grads.tensors_mut() {
        t.data.iter_mut().for_each(|g| *g *= s);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, Framework};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::<f32>::new(Framework::Ccvae, Architecture::tiny(), 0).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut adam = Adam::new(&p, 1e-3);
        adam.step(&mut p, &g);
        for ((_, a), (_, b)) in p.named_tensors().iter().zip(before.named_tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((y - x) - 1e-3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clipping_caps_the_norm() {
        let p = ModelParams::<f32>::new(Framework::VaeCls, Architecture::tiny(), 0).unwrap();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 10.0);
        }
        assert!(clip_global_norm(&mut g, 100.0));
        assert!((global_norm(&g) - 100.0).abs() < 1e-2);
        assert!(!clip_global_norm(&mut g, 1000.0));
    }
}
