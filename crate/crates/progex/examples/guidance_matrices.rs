//! The two guidance channels derived from a program: the semantic
//! matrix feeding cross-attention and the transition mask restricting
//! self-attention, plus the schedules that drive execution order.

use progex::dsl::{parse_program, Dialect, Vocabulary, TOKEN_BUDGET};
use progex::flow::{parallel_waves, sequential_waves};
use progex::guidance::{declared_parents, semantic_matrix_values, token_ids, transition_mask};
use progex::rng::seeded_rng;
use progex::tensor::params::{Init, ParamStore};
use progex::tensor::NEG_INF;

fn main() {
    let src = "Select(bag); Select(bottle); And()[1,2]; Select(tree); Exist()[3];";
    let program = parse_program(src, Dialect::Reasoning).unwrap();
    let vocab = Vocabulary::reasoning();
    let n = program.n_exec();

    // Each routine flattens to a fixed budget of eight token slots,
    // padded with a dedicated token.
    let ids = token_ids(&program, &vocab, TOKEN_BUDGET).unwrap();
    for (pos, chunk) in ids.chunks(TOKEN_BUDGET).enumerate() {
        let words: Vec<&str> = chunk.iter().map(|&i| vocab.tokens[i].as_str()).collect();
        println!("routine {}: {words:?}", pos + 1);
    }

    // The semantic matrix stacks embedded token rows, one row per
    // routine, so it is n x (budget * d_token).
    let d_token = 4;
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(7, "example-embed", 0);
    let embed = store.add("embed", vocab.tokens.len(), d_token, Init::Uniform(0.4), &mut rng);
    let semantic =
        semantic_matrix_values(store.value(embed), &program, &vocab, TOKEN_BUDGET, true).unwrap();
    println!("\nsemantic matrix: {} x {}", semantic.rows, semantic.cols);

    // The transition mask opens row -> parent links and the diagonal;
    // everything else is NEG_INF before the softmax.
    let active: Vec<usize> = (1..=n).collect();
    let mask = transition_mask(&program, &active, declared_parents(&program));
    println!("transition mask with every routine active (o open, . blocked):");
    for r in 0..n {
        let row: String = (0..n)
            .map(|c| if mask.get(r, c) == NEG_INF { '.' } else { 'o' })
            .collect();
        println!("  row {} {row}", r + 1);
    }

    // With only position 3 active, rows for inactive routines keep just
    // their diagonal and stop exchanging information.
    let mask = transition_mask(&program, &[3], declared_parents(&program));
    println!("transition mask with only routine 3 active:");
    for r in 0..n {
        let row: String = (0..n)
            .map(|c| if mask.get(r, c) == NEG_INF { '.' } else { 'o' })
            .collect();
        println!("  row {} {row}", r + 1);
    }

    // Sequential schedule: one routine per step, program order.
    // Parallel schedule: a wave per dependency level, so independent
    // branches run together and the step count is the longest path.
    println!("\nsequential waves: {:?}", sequential_waves(&program));
    println!("parallel waves:   {:?}", parallel_waves(&program));
}
