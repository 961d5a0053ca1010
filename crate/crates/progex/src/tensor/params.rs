//! Named trainable parameters and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::Gradients;
use super::Matrix;

/// Initialization scheme for a freshly added parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in [-a, a].
    Uniform(f64),
    /// Uniform Glorot: a = sqrt(6 / (fan_in + fan_out)).
    Glorot,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Flat registry of parameters. Ids are assigned in insertion order and
/// stay stable, so gradients, checkpoints and the tape all agree on them.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Adam step counter (number of completed updates).
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name: {name}"
        );
        let value = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Uniform(a) => {
                Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..=a))
            }
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..=a))
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            value,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.params[id].name
    }

    pub fn shape(&self, id: usize) -> (usize, usize) {
        let m = &self.params[id].value;
        (m.rows, m.cols)
    }

    pub fn value(&self, id: usize) -> &Matrix {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.params[id].value
    }

    pub fn entry_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    pub(crate) fn adam_slot(&self, id: usize) -> (&Matrix, &Matrix) {
        (&self.params[id].m, &self.params[id].v)
    }

    pub(crate) fn set_adam_slot(&mut self, id: usize, m: Matrix, v: Matrix) {
        let p = &mut self.params[id];
        assert_eq!((m.rows, m.cols), (p.value.rows, p.value.cols));
        assert_eq!((v.rows, v.cols), (p.value.rows, p.value.cols));
        p.m = m;
        p.v = v;
    }

    /// One Adam update with decoupled weight decay. `decay_mask(id)` lets
    /// callers exempt parameters (embeddings, biases) from decay.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig, decay: impl Fn(usize) -> bool) {
        assert_eq!(grads.by_id.len(), self.params.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (id, p) in self.params.iter_mut().enumerate() {
            let g = &grads.by_id[id];
            for i in 0..p.value.data.len() {
                let gi = g.data[i];
                p.m.data[i] = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * gi;
                p.v.data[i] = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = p.m.data[i] / bc1;
                let vhat = p.v.data[i] / bc2;
                let mut delta = cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                if decay(id) {
                    delta += cfg.lr * cfg.weight_decay * p.value.data[i];
                }
                p.value.data[i] -= delta;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;

    /// Adam on a convex quadratic drives the parameter to the optimum.
    #[test]
    fn adam_minimizes_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let p = store.add("x", 1, 2, Init::Uniform(2.0), &mut rng);
        let target = Matrix::from_vec(1, 2, vec![0.3, -0.7]);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..400 {
            let mut tape = Tape::new();
            let x = tape.param(&store, p);
            let loss = tape.mse_vs_const(x, &target);
            let grads = tape.backward(loss, &store);
            store.adam_step(&grads, &cfg, |_| false);
        }
        assert!((store.value(p).data[0] - 0.3).abs() < 1e-3);
        assert!((store.value(p).data[1] + 0.7).abs() < 1e-3);
    }

    #[test]
    fn weight_decay_shrinks_unused_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = store.add("w", 1, 1, Init::Uniform(1.0), &mut rng);
        store.value_mut(p).data[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let grads = Gradients::zeros_like(&store);
        for _ in 0..10 {
            store.adam_step(&grads, &cfg, |_| true);
        }
        let v = store.value(p).data[0];
        assert!(v < 1.0 && v > 0.0, "decay should shrink toward zero, got {v}");
    }
}
