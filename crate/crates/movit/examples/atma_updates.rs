//! Shows how the memory bank blends repeated observations of the same
//! sample: first insertion is verbatim, later ones are folded in with
//! the temporal moving average.
//!
//! Run: `cargo run --example atma_updates`

use movit::memory::{alpha_schedule, AttentionFact, MemoryBank, ScheduleState};

fn main() {
    let mut bank = MemoryBank::<f32>::new(2, 1);
    let schedule = ScheduleState::new(0.01, 30, 0.10).expect("valid schedule");

    println!("caching the same (sample 0, head 0) slot across epochs:\n");
    for epoch in 0..6 {
        let alpha = alpha_schedule(epoch, &schedule);
        // Pretend the model produced a drifting key for this sample.
        let generated = AttentionFact {
            sample_id: 0,
            head: 0,
            key: vec![epoch as f32, 1.0 - epoch as f32 * 0.1],
            value: vec![1.0, -1.0],
        };
        bank.cache_or_update(generated, alpha, alpha).expect("dims match");
        let stored = bank.get(0, 0).expect("slot exists");
        println!(
            "epoch {epoch}: alpha {alpha:.6} -> stored key [{:.4}, {:.4}]",
            stored.key[0], stored.key[1]
        );
    }
    println!("\nbank size stays {} (updates replace, never append)", bank.len());

    // A fully worked scalar trace with alpha fixed at 0.9.
    let mut bank = MemoryBank::<f64>::new(1, 1);
    print!("\nscalar trace at alpha = 0.9, inputs 1,2,3,4: ");
    for gen in [1.0, 2.0, 3.0, 4.0] {
        bank.cache_or_update(
            AttentionFact {
                sample_id: 0,
                head: 0,
                key: vec![gen],
                value: vec![gen],
            },
            0.9,
            0.9,
        )
        .expect("dims match");
        print!("{:.3} ", bank.get(0, 0).expect("slot").value[0]);
    }
    println!("(1 -> 1.9 -> 2.89 -> 3.889)");
}
