//! Miniature data-efficiency sweep: train the baseline and the
//! memorizing variant on shrinking fractions of the training set and
//! tabulate test accuracy. Small on purpose; the acceptance suite runs
//! the full five-seed version.
//!
//! Run: `cargo run --release --example data_fraction_sweep`

use movit::config::RunConfig;
use movit::run::run_train;

fn main() -> movit::Result<()> {
    let fractions = [0.1, 0.5];
    let seeds = [0u64, 1];
    let out = std::env::temp_dir().join("movit_sweep_example");

    println!("{:>9} {:>6} {:>10} {:>10}", "fraction", "seed", "baseline", "movit");
    for &fraction in &fractions {
        for &seed in &seeds {
            let mut accs = [0.0f64; 2];
            for (slot, movit_on) in [(0usize, false), (1, true)] {
                let mut cfg = RunConfig::default();
                cfg.data.samples_per_class = 60;
                cfg.data.test_samples_per_class = 30;
                cfg.train.total_epochs = 12;
                cfg.train.seed = seed;
                cfg.train.data_fraction = fraction;
                cfg.eval_every = 0;
                if !movit_on {
                    cfg.vit.movit_layer = None;
                }
                let outcome = run_train(&cfg, &out, true)?;
                accs[slot] = outcome.record.final_test.accuracy;
            }
            println!(
                "{fraction:>9.2} {seed:>6} {:>10.4} {:>10.4}",
                accs[0], accs[1]
            );
        }
    }
    println!("\nartifacts under {}", out.display());
    Ok(())
}
