//! Prints the ramp-down schedule that drives the memory update
//! coefficients: near-total replacement at epoch 0, flattening to
//! `1 − alpha0` once the ramp ends.
//!
//! Run: `cargo run --example alpha_schedule`

use movit::memory::{alpha_schedule, ScheduleState};

fn main() {
    let total_epochs = 100;
    let schedule = ScheduleState::new(0.01, total_epochs, 0.10).expect("valid schedule");
    println!("total epochs: {total_epochs}, ramp: {} epochs", schedule.ramp_epochs);
    println!("{:>6}  {:>12}", "epoch", "alpha");
    for t in (0..=schedule.ramp_epochs).chain([15, 25, 50, 99]) {
        println!("{t:>6}  {:>12.9}", alpha_schedule(t, &schedule));
    }
    let end = alpha_schedule(schedule.ramp_epochs, &schedule);
    println!("\nflat value after the ramp: {end} (= 1 - alpha0)");
}
