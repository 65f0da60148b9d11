//! Retrieval path in isolation: build a small bank, look up the top-k
//! facts for a query, run attention over the retrieved pairs, and fuse
//! the result with a local branch through the learned gate.
//!
//! Run: `cargo run --example knn_memory_attention`

use movit::memory::{AttentionFact, MemoryBank};
use movit::movit_block::{gated_fuse, knn_lookup, memory_attention, KnnMode};
use movit::tensor::Tape;

fn main() -> movit::Result<()> {
    let dim = 4;
    let mut bank = MemoryBank::<f32>::new(dim, 1);
    for i in 0..8u64 {
        let angle = i as f32 * 0.7;
        bank.cache_or_update(
            AttentionFact {
                sample_id: i,
                head: 0,
                key: vec![angle.cos(), angle.sin(), 0.2, -0.2],
                value: vec![i as f32; dim],
            },
            1.0,
            1.0,
        )?;
    }

    let query = vec![1.0f32, 0.05, 0.2, -0.2];
    let retrieved = knn_lookup(&query, 1, &bank, 3, KnnMode::Exact, None)?;
    println!("top-3 facts for the query:");
    for r in &retrieved.per_query[0] {
        println!("  bank index {:>2}  score {:+.4}", r.bank_index, r.score);
    }

    let mut tape = Tape::<f32>::new();
    let q = tape.leaf(query, vec![1, dim])?;
    let from_memory = memory_attention(&mut tape, q, &retrieved)?;
    println!("\nmemory attention output: {:?}", tape.data(from_memory));

    let local = tape.constant(vec![0.0; dim], vec![1, dim])?;
    for bias in [-20.0, 0.0, 20.0] {
        let gate = tape.leaf(vec![bias], vec![1, 1])?;
        let fused = gated_fuse(&mut tape, local, from_memory, gate, 0)?;
        println!(
            "gate bias {bias:+5.1} (g = {:.6}) -> fused {:?}",
            1.0 / (1.0 + (-bias as f32).exp()),
            tape.data(fused)
        );
    }
    Ok(())
}
