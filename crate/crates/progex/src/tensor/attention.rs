//! Scaled dot-product attention, in two flavours.
//!
//! The literal form has no learned projections and a single head:
//! `softmax(q kv^T / sqrt(d) + mask) kv`. It is the form unit tests and
//! identity arguments reason about. The learned form adds per-site
//! Q/K/V/output projections split over `heads` heads, scaled by the
//! per-head width.

use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use super::tape::{Tape, Var};
use super::{softmax_rows, Matrix, TensorError};

/// Parameters for one attention site. `projections` is `None` in literal
/// mode; learned mode stores ids of Wq, Wk, Wv, Wo (all d×d).
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: usize,
    pub projections: Option<[usize; 4]>,
}

impl AttentionParams {
    /// Single-head attention with identity projections.
    pub fn literal() -> Self {
        AttentionParams {
            heads: 1,
            projections: None,
        }
    }

    pub fn learned(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let wq = store.add(&format!("{prefix}.wq"), d, d, Init::Glorot, rng);
        let wk = store.add(&format!("{prefix}.wk"), d, d, Init::Glorot, rng);
        let wv = store.add(&format!("{prefix}.wv"), d, d, Init::Glorot, rng);
        let wo = store.add(&format!("{prefix}.wo"), d, d, Init::Glorot, rng);
        AttentionParams {
            heads,
            projections: Some([wq, wk, wv, wo]),
        }
    }
}

/// Attention on the tape. `q_in` supplies queries (n×d), `kv` supplies
/// keys and values (m×d), `mask` is an optional additive n×m matrix.
pub fn attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    q_in: Var,
    kv: Var,
    mask: Option<&Matrix>,
) -> Var {
    let d = tape.value(q_in).cols;
    assert_eq!(tape.value(kv).cols, d, "query/key width mismatch");
    match params.projections {
        None => {
            assert_eq!(params.heads, 1, "literal attention is single-head");
            let scale = 1.0 / (d as f64).sqrt();
            let logits = tape.matmul_nt(q_in, kv);
            let logits = tape.scale(logits, scale);
            let logits = match mask {
                Some(m) => tape.add_const(logits, m),
                None => logits,
            };
            let weights = tape.softmax_rows(logits);
            tape.matmul(weights, kv)
        }
        Some([wq, wk, wv, wo]) => {
            let dh = d / params.heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let wq = tape.param(store, wq);
            let wk = tape.param(store, wk);
            let wv = tape.param(store, wv);
            let wo = tape.param(store, wo);
            let q = tape.matmul(q_in, wq);
            let k = tape.matmul(kv, wk);
            let v = tape.matmul(kv, wv);
            let mut head_outs = Vec::with_capacity(params.heads);
            for h in 0..params.heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let logits = tape.matmul_nt(qh, kh);
                let logits = tape.scale(logits, scale);
                let logits = match mask {
                    Some(m) => tape.add_const(logits, m),
                    None => logits,
                };
                let weights = tape.softmax_rows(logits);
                head_outs.push(tape.matmul(weights, vh));
            }
            let merged = tape.concat_cols(&head_outs);
            tape.matmul(merged, wo)
        }
    }
}

/// Literal cross-attention on plain matrices: softmax(q kv^T / sqrt(d)) kv.
pub fn cross_attention_values(q: &Matrix, kv: &Matrix) -> Result<Matrix, TensorError> {
    attention_values(q, kv, None)
}

/// Literal masked self-attention on plain matrices:
/// softmax(x x^T / sqrt(d) + mask) x.
pub fn masked_self_attention_values(x: &Matrix, mask: &Matrix) -> Result<Matrix, TensorError> {
    attention_values(x, x, Some(mask))
}

fn attention_values(q: &Matrix, kv: &Matrix, mask: Option<&Matrix>) -> Result<Matrix, TensorError> {
    if q.cols != kv.cols {
        return Err(TensorError::Shape(format!(
            "query width {} != key width {}",
            q.cols, kv.cols
        )));
    }
    if let Some(m) = mask {
        if (m.rows, m.cols) != (q.rows, kv.rows) {
            return Err(TensorError::Shape(format!(
                "mask {}x{} does not fit {}x{} logits",
                m.rows, m.cols, q.rows, kv.rows
            )));
        }
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut logits = q.matmul_nt(kv).scale(scale);
    if let Some(m) = mask {
        logits = logits.add(m);
    }
    let weights = softmax_rows(&logits)?;
    Ok(weights.matmul(kv))
}

fn slice_cols_values(m: &Matrix, start: usize, len: usize) -> Matrix {
    Matrix::from_fn(m.rows, len, |i, j| m.get(i, start + j))
}

/// The same computation as [`attention`] on plain matrices, for forward
/// passes that never need gradients.
pub fn attention_forward(
    store: &ParamStore,
    params: &AttentionParams,
    q_in: &Matrix,
    kv: &Matrix,
    mask: Option<&Matrix>,
) -> Matrix {
    match params.projections {
        None => {
            assert_eq!(params.heads, 1, "literal attention is single-head");
            attention_values(q_in, kv, mask).expect("attention shapes")
        }
        Some([wq, wk, wv, wo]) => {
            let d = q_in.cols;
            let dh = d / params.heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let q = q_in.matmul(store.value(wq));
            let k = kv.matmul(store.value(wk));
            let v = kv.matmul(store.value(wv));
            let mut merged = Matrix::zeros(q_in.rows, d);
            for h in 0..params.heads {
                let qh = slice_cols_values(&q, h * dh, dh);
                let kh = slice_cols_values(&k, h * dh, dh);
                let mut logits = qh.matmul_nt(&kh).scale(scale);
                if let Some(m) = mask {
                    logits = logits.add(m);
                }
                let weights = softmax_rows(&logits).expect("attention softmax");
                let vh = slice_cols_values(&v, h * dh, dh);
                let out = weights.matmul(&vh);
                for i in 0..out.rows {
                    merged.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(out.row(i));
                }
            }
            merged.matmul(store.value(wo))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NEG_INF;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Each literal attention output row is a convex combination of value
    /// rows, so it stays inside their per-column min/max envelope.
    #[test]
    fn output_rows_stay_in_value_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_matrix(&mut rng, 4, 6);
            let kv = random_matrix(&mut rng, 5, 6);
            let out = cross_attention_values(&q, &kv).unwrap();
            for j in 0..kv.cols {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..kv.rows {
                    lo = lo.min(kv.get(i, j));
                    hi = hi.max(kv.get(i, j));
                }
                for i in 0..out.rows {
                    let v = out.get(i, j);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    /// A diagonal-only mask admits each row to itself alone, making masked
    /// self-attention the identity map.
    #[test]
    fn diagonal_mask_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(&mut rng, 6, 8);
        let mask = Matrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { NEG_INF });
        let out = masked_self_attention_values(&x, &mask).unwrap();
        for (a, b) in out.data.iter().zip(&x.data) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// An all-open mask must match the unmasked computation exactly.
    #[test]
    fn open_mask_equals_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_matrix(&mut rng, 5, 7);
        let open = Matrix::zeros(5, 5);
        let masked = masked_self_attention_values(&x, &open).unwrap();
        let unmasked = attention_values(&x, &x, None).unwrap();
        for (a, b) in masked.data.iter().zip(&unmasked.data) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Learned attention on the tape must agree with the literal kernel
    /// when its projections are forced to identity and heads = 1.
    #[test]
    fn learned_with_identity_projections_matches_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let params = AttentionParams::learned(&mut store, &mut rng, "att", 6, 1);
        if let Some(ids) = params.projections {
            for id in ids {
                let (r, c) = store.shape(id);
                *store.value_mut(id) = Matrix::from_fn(r, c, |i, j| if i == j { 1.0 } else { 0.0 });
            }
        }
        let q = random_matrix(&mut rng, 3, 6);
        let kv = random_matrix(&mut rng, 4, 6);
        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let kvv = tape.constant(kv.clone());
        let out = attention(&mut tape, &store, &params, qv, kvv, None);
        let expect = cross_attention_values(&q, &kv).unwrap();
        for (a, b) in tape.value(out).data.iter().zip(&expect.data) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Multi-head output changes when heads change, but keeps shape.
    #[test]
    fn multi_head_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut store = ParamStore::new();
        let params = AttentionParams::learned(&mut store, &mut rng, "mh", 8, 4);
        let q = random_matrix(&mut rng, 3, 8);
        let kv = random_matrix(&mut rng, 5, 8);
        let mut tape = Tape::new();
        let qv = tape.constant(q);
        let kvv = tape.constant(kv);
        let out = attention(&mut tape, &store, &params, qv, kvv, None);
        let m = tape.value(out);
        assert_eq!((m.rows, m.cols), (3, 8));
    }
}
