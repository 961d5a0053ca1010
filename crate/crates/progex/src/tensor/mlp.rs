//! Two-layer perceptron: `relu(x W1 + b1) W2 + b2`.

use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use super::tape::{Tape, Var};
use super::Matrix;

#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Self {
        let w1 = store.add(&format!("{prefix}.w1"), d_in, hidden, Init::Glorot, rng);
        let b1 = store.add(&format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng);
        let w2 = store.add(&format!("{prefix}.w2"), hidden, d_out, Init::Glorot, rng);
        let b2 = store.add(&format!("{prefix}.b2"), 1, d_out, Init::Zeros, rng);
        Mlp {
            w1,
            b1,
            w2,
            b2,
            d_in,
            hidden,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        assert_eq!(tape.value(x).cols, self.d_in, "mlp input width");
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(x, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, w2);
        tape.add_row_broadcast(o, b2)
    }

    /// The same computation as [`Mlp::forward`] on a plain matrix.
    pub fn forward_values(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        assert_eq!(x.cols, self.d_in, "mlp input width");
        let b1 = store.value(self.b1);
        let b2 = store.value(self.b2);
        let mut h = x.matmul(store.value(self.w1));
        for i in 0..h.rows {
            for (v, b) in h.row_mut(i).iter_mut().zip(&b1.data) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut o = h.matmul(store.value(self.w2));
        for i in 0..o.rows {
            for (v, b) in o.row_mut(i).iter_mut().zip(&b2.data) {
                *v += b;
            }
        }
        o
    }

    /// Parameter ids, in a stable order.
    pub fn ids(&self) -> [usize; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "m", 2, 3, 1);
        *store.value_mut(mlp.w1) = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 0.5, 2.0, 1.0]);
        *store.value_mut(mlp.b1) = Matrix::from_vec(1, 3, vec![0.1, -0.2, 0.0]);
        *store.value_mut(mlp.w2) = Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]);
        *store.value_mut(mlp.b2) = Matrix::from_vec(1, 1, vec![0.5]);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(1, 2, vec![2.0, -1.0]));
        let y = mlp.forward(&mut tape, &store, x);
        // h = relu([2*1 - 0.5 + 0.1, 0 - 2 - 0.2, -2 - 1]) = [1.6, 0, 0]
        assert!((tape.scalar(y) - 2.1).abs() < 1e-12);
    }
}
