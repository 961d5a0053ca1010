//! Central-difference validation of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};

/// Denominator floor for relative errors. Central differences carry
/// roundoff noise of roughly |f| * ulp / eps (~5e-12 here), so gradients
/// below the floor are compared absolutely at a resolution finite
/// differences can actually measure; everything larger is relative.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over parameter entries of
    /// |analytic - numeric| / (|analytic| + REL_ERR_FLOOR)
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
    /// Smallest |x| that entered a ReLU during the analytic forward pass.
    /// Values close to zero make finite differences unreliable.
    pub min_relu_input_abs: f64,
}

/// Compare tape gradients of `f` (a scalar-valued build function) against
/// central differences with step `eps` over every parameter entry.
pub fn grad_check(
    store: &mut ParamStore,
    f: &dyn Fn(&ParamStore, &mut Tape) -> Var,
    eps: f64,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let loss = f(store, &mut tape);
    let min_relu = tape.min_relu_input_abs();
    let analytic = tape.backward(loss, store);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
        min_relu_input_abs: min_relu,
    };

    for id in 0..store.len() {
        let (r, c) = store.shape(id);
        for i in 0..r * c {
            let orig = store.value(id).data[i];
            store.value_mut(id).data[i] = orig + eps;
            let mut tp = Tape::new();
            let lp = f(store, &mut tp);
            let fp = tp.scalar(lp);
            store.value_mut(id).data[i] = orig - eps;
            let mut tm = Tape::new();
            let lm = f(store, &mut tm);
            let fm = tm.scalar(lm);
            store.value_mut(id).data[i] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let g = analytic.by_id[id].data[i];
            let rel = (g - numeric).abs() / (g.abs() + REL_ERR_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_entry = i;
                report.analytic_at_worst = g;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::attention::{attention, AttentionParams};
    use crate::tensor::mlp::Mlp;
    use crate::tensor::params::Init;
    use crate::tensor::{Matrix, NEG_INF};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gradients of an MLP away from ReLU kinks check out to 1e-6.
    #[test]
    fn mlp_gradients_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, &mut rng, "m", 3, 4, 2);
        let x = Matrix::from_fn(2, 3, |i, j| 0.3 + 0.2 * (i * 3 + j) as f64);
        let target = Matrix::from_vec(2, 2, vec![0.5, -0.5, 1.0, 0.0]);
        let f = move |store: &ParamStore, tape: &mut Tape| -> Var {
            let xv = tape.constant(x.clone());
            let y = mlp.forward(tape, store, xv);
            tape.mse_vs_const(y, &target)
        };
        let report = grad_check(&mut store, &f, 1e-5);
        assert!(
            report.max_rel_err < 1e-6,
            "max rel err {} at {}[{}]",
            report.max_rel_err,
            report.worst_param,
            report.worst_entry
        );
    }

    /// Gradients flow correctly through masked attention, including
    /// through entries the mask zeroes out (their gradient is exactly 0).
    #[test]
    fn masked_attention_gradients_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut store = ParamStore::new();
        let x_id = store.add("x", 4, 6, Init::Uniform(0.8), &mut rng);
        let params = AttentionParams::literal();
        let mask = Matrix::from_fn(4, 4, |i, j| {
            if i == j || (i + j) % 2 == 0 {
                0.0
            } else {
                NEG_INF
            }
        });
        let mut target = Matrix::zeros(4, 6);
        for v in target.data.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let f = move |store: &ParamStore, tape: &mut Tape| -> Var {
            let x = tape.param(store, x_id);
            let out = attention(tape, store, &params, x, x, Some(&mask));
            tape.mse_vs_const(out, &target)
        };
        let report = grad_check(&mut store, &f, 1e-5);
        assert!(report.max_rel_err < 1e-6, "max rel err {}", report.max_rel_err);
    }
}
