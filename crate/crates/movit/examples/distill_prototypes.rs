//! Prototype distillation on a clustered toy bank: greedy MMD selection
//! picks keys that cover every cluster, and the distilled set scores a
//! far lower MMD² than a naive first-P subset.
//!
//! Run: `cargo run --example distill_prototypes`

use movit::memory::{AttentionFact, FactStore, MemoryBank};
use movit::pal::{distill, mmd_squared, MmdVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> movit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 6;
    let clusters = [
        [2.0f32, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
    ];
    let mut bank = MemoryBank::<f32>::new(dim, 1);
    for i in 0..200u64 {
        let center = clusters[(i % 4) as usize];
        let key: Vec<f32> = center
            .iter()
            .map(|&c| c + rng.random_range(-0.3..0.3))
            .collect();
        bank.cache_or_update(
            AttentionFact {
                sample_id: i,
                head: 0,
                key: key.clone(),
                value: key,
            },
            1.0,
            1.0,
        )?;
    }

    let protos = distill(&bank, 4, 0.5, 4, MmdVariant::Standard)?;
    println!(
        "distilled {} facts into {} prototypes ({}x compression)",
        bank.len(),
        protos.prototypes.len(),
        bank.len() / protos.prototypes.len()
    );

    let all: Vec<&[f32]> = (0..bank.len()).map(|i| bank.key(i)).collect();
    let selected: Vec<&[f32]> = protos.prototypes.iter().map(|p| p.key.as_slice()).collect();
    let naive: Vec<&[f32]> = all[..protos.prototypes.len()].to_vec();
    println!(
        "MMD² naive first-{}: {:.6}",
        protos.prototypes.len(),
        mmd_squared(&naive, &all, MmdVariant::Standard)?
    );
    println!(
        "MMD² greedy selection: {:.6}",
        mmd_squared(&selected, &all, MmdVariant::Standard)?
    );

    println!("\nselected source indices (note the cluster coverage mod 4):");
    let sources: Vec<u64> = protos.prototypes.iter().map(|p| p.source_index).collect();
    println!("  {sources:?}");
    println!(
        "  cluster of each: {:?}",
        sources.iter().map(|s| s % 4).collect::<Vec<_>>()
    );
    Ok(())
}
