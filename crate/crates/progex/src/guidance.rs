//! Disentangled program guidance.
//!
//! A program enters the executor as two separate pieces:
//!
//! * a semantic matrix with one row per executable routine, the
//!   concatenation of that routine's token embeddings padded to a fixed
//!   budget, plus a sinusoidal positional encoding over guidance rows;
//! * a transition mask over guidance rows, rebuilt every step, that
//!   opens exactly the links from the active routines to their parents
//!   (plus the diagonal, which carries each row's own state forward).
//!
//! Parent positions are never embedded as tokens. Structure reaches the
//! executor only through the mask, so zeroing the mask removes structure
//! and zeroing the semantic matrix removes content, independently.

use crate::dsl::{DslError, Program, Vocabulary};
use crate::tensor::params::ParamStore;
use crate::tensor::{sinusoid_row, Matrix, Tape, Var, NEG_INF};

/// Scale on the sinusoidal encoding. Keeps the position signal near the
/// magnitude of freshly initialized token embeddings instead of
/// swamping them.
pub const PE_SCALE: f64 = 0.1;

/// Sinusoidal rows for guidance-row ordinals 0..n, scaled by [`PE_SCALE`].
///
/// The same table is added to the semantic matrix and to the executor's
/// query stream. The result matrix starts at zero, so without a
/// position term every query row would be identical and no output could
/// depend on which routine the pointer selects.
pub fn positional_encoding(n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let row = sinusoid_row(i, d);
        for (dst, src) in m.row_mut(i).iter_mut().zip(row) {
            *dst = PE_SCALE * src;
        }
    }
    m
}

/// Token ids of all executable routines, flattened row-major:
/// `n_exec * budget` entries, each routine padded to `budget` with id 0.
pub fn token_ids(
    program: &Program,
    vocab: &Vocabulary,
    budget: usize,
) -> Result<Vec<usize>, DslError> {
    let mut ids = Vec::with_capacity(program.n_exec() * budget);
    for r in program.routines.iter().filter(|r| !r.kind.is_marker()) {
        ids.extend(vocab.routine_token_ids(r, budget)?);
    }
    Ok(ids)
}

/// Semantic matrix on the tape: `n_exec x (budget * d_m)`, where `d_m`
/// is the embedding width. Gradients flow into the embedding table.
pub fn semantic_matrix(
    tape: &mut Tape,
    store: &ParamStore,
    embedding: usize,
    program: &Program,
    vocab: &Vocabulary,
    budget: usize,
    positional: bool,
) -> Result<Var, DslError> {
    let n = program.n_exec();
    assert!(n > 0, "program has no executable routines");
    let d_m = store.value(embedding).cols;
    let ids = token_ids(program, vocab, budget)?;
    let gathered = tape.gather_rows(store, embedding, &ids);
    let mut ps = tape.reshape(gathered, n, budget * d_m);
    if positional {
        let pe = tape.constant(positional_encoding(n, budget * d_m));
        ps = tape.add(ps, pe);
    }
    Ok(ps)
}

/// The same values as [`semantic_matrix`] computed without a tape.
pub fn semantic_matrix_values(
    embedding: &Matrix,
    program: &Program,
    vocab: &Vocabulary,
    budget: usize,
    positional: bool,
) -> Result<Matrix, DslError> {
    let n = program.n_exec();
    let d_m = embedding.cols;
    let d = budget * d_m;
    let ids = token_ids(program, vocab, budget)?;
    let mut m = Matrix::zeros(n, d);
    for (slot, &id) in ids.iter().enumerate() {
        let row = slot / budget;
        let offset = (slot % budget) * d_m;
        m.row_mut(row)[offset..offset + d_m].copy_from_slice(embedding.row(id));
    }
    if positional {
        m = m.add(&positional_encoding(n, d));
    }
    Ok(m)
}

/// Transition mask over guidance rows for the currently active program
/// positions. Entry `[i][j]` is zero when `i == j`, or when row `i`
/// belongs to an active routine and column `j` to one of its parents;
/// every other entry is [`NEG_INF`].
///
/// `parents_of` maps a 1-based program position to parent positions. The
/// reasoning dialect reads them from the program; the policy dialect
/// supplies the previously executed routine.
pub fn transition_mask(
    program: &Program,
    active: &[usize],
    parents_of: impl Fn(usize) -> Vec<usize>,
) -> Matrix {
    let n = program.n_exec();
    let mut m = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { NEG_INF });
    for &p in active {
        let row = match program.exec_row(p) {
            Some(r) => r,
            // Markers never execute; an active marker is a pointer bug,
            // tolerated here so mask construction stays total.
            None => continue,
        };
        for q in parents_of(p) {
            if q < 1 || q > program.len() {
                continue;
            }
            if let Some(col) = program.exec_row(q) {
                m.set(row, col, 0.0);
            }
        }
    }
    m
}

/// Parent provider for the reasoning dialect: declared parent lists.
pub fn declared_parents(program: &Program) -> impl Fn(usize) -> Vec<usize> + '_ {
    move |p| program.routine(p).parents.clone()
}

/// All-open mask of the same shape, used by the structure ablation.
pub fn open_mask(n: usize) -> Matrix {
    Matrix::zeros(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Dialect, TOKEN_BUDGET};
    use crate::rng::seeded_rng;
    use crate::tensor::params::Init;
    use rand::Rng;

    fn reasoning_fixture() -> Program {
        parse_program(
            "Select(bag); Select(dog); Verify_relation(left)[1,2]",
            Dialect::Reasoning,
        )
        .unwrap()
    }

    #[test]
    fn mask_matches_brute_force_predicate() {
        let program = reasoning_fixture();
        let active = vec![3usize];
        let m = transition_mask(&program, &active, declared_parents(&program));
        let n = program.n_exec();
        assert_eq!((m.rows, m.cols), (n, n));
        for i in 0..n {
            for j in 0..n {
                let pos_i = i + 1; // no markers in reasoning programs
                let pos_j = j + 1;
                let open = i == j
                    || (active.contains(&pos_i)
                        && program.routine(pos_i).parents.contains(&pos_j));
                let want = if open { 0.0 } else { NEG_INF };
                assert_eq!(m.get(i, j), want, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn mask_skips_markers_in_position_mapping() {
        let program = parse_program(
            "Mine(gold); While(env[wood]>0){ Mine(wood); } Sell(gold);",
            Dialect::Policy,
        )
        .unwrap();
        // Positions: 1 Mine, 2 While, 3 Mine, 4 marker, 5 Sell.
        // Active position 5 with previously executed 3 must open guidance
        // row 3 (Sell) toward column 2 (inner Mine), skipping the marker.
        let m = transition_mask(&program, &[5], |_| vec![3]);
        assert_eq!(m.rows, 4);
        assert_eq!(m.get(3, 2), 0.0);
        assert_eq!(m.get(3, 0), NEG_INF);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(2, 1), NEG_INF);
    }

    #[test]
    fn open_mask_is_all_zero() {
        let m = open_mask(3);
        assert!(m.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn semantic_matrix_concatenates_embeddings() {
        let program = reasoning_fixture();
        let vocab = Vocabulary::reasoning();
        let mut rng = seeded_rng(7, "emb", 0);
        let emb = Matrix::from_fn(vocab.len(), 4, |_, _| rng.gen_range(-0.5..0.5));
        let m = semantic_matrix_values(&emb, &program, &vocab, TOKEN_BUDGET, false).unwrap();
        assert_eq!((m.rows, m.cols), (3, TOKEN_BUDGET * 4));
        let sel = vocab.id("Select").unwrap();
        let bag = vocab.id("bag").unwrap();
        assert_eq!(&m.row(0)[0..4], emb.row(sel));
        assert_eq!(&m.row(0)[4..8], emb.row(bag));
        // Padding slots carry the pad embedding, row 0 of the table.
        assert_eq!(&m.row(0)[8..12], emb.row(0));
    }

    #[test]
    fn tape_and_value_paths_agree_and_gradients_reach_embeddings() {
        let program = reasoning_fixture();
        let vocab = Vocabulary::reasoning();
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(11, "emb", 1);
        let emb = store.add("emb", vocab.len(), 4, Init::Uniform(0.3), &mut rng);
        let mut tape = Tape::new();
        let ps = semantic_matrix(
            &mut tape, &store, emb, &program, &vocab, TOKEN_BUDGET, true,
        )
        .unwrap();
        let want =
            semantic_matrix_values(store.value(emb), &program, &vocab, TOKEN_BUDGET, true)
                .unwrap();
        assert_eq!(tape.value(ps), &want);

        let loss = tape.sum_all(ps);
        let grads = tape.backward(loss, &store);
        let g = &grads.by_id[emb];
        let sel = vocab.id("Select").unwrap();
        assert!(g.row(sel).iter().any(|&x| x != 0.0));
        // "Select" appears twice, once per Select routine.
        assert_eq!(g.row(sel)[0], 2.0);
        let unused = vocab.id("Or").unwrap();
        assert!(g.row(unused).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn positional_encoding_shifts_rows_apart() {
        let pe = positional_encoding(4, 16);
        for i in 1..4 {
            assert!(pe.row(0) != pe.row(i), "row {i} equals row 0");
        }
        let base = positional_encoding(4, 16);
        assert_eq!(pe, base);
    }
}
