//! End-to-end training on the synthetic texture task with the
//! memorizing layer enabled, followed by evaluation with the full bank
//! and with a distilled prototype bank.
//!
//! Run: `cargo run --release --example train_synthetic`

use movit::config::RunConfig;
use movit::pal::{distill, MmdVariant};
use movit::memory::MemoryBank;
use movit::run::{dataset_from_config, Split};
use movit::train::{evaluate, train_epoch, AdamW};
use movit::vit::VitModel;

fn main() -> movit::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.samples_per_class = 100;
    cfg.train.total_epochs = 8;
    cfg.validate()?;

    let train_set = dataset_from_config(&cfg.data, &cfg.vit, Split::Train)?;
    let test_set = dataset_from_config(&cfg.data, &cfg.vit, Split::Test)?;
    println!(
        "train {} samples, test {} samples, {} classes",
        train_set.len(),
        test_set.len(),
        train_set.num_classes
    );

    let mut model = VitModel::<f32>::init(cfg.vit.clone(), cfg.train.seed)?;
    let mut bank = MemoryBank::<f32>::new(cfg.vit.head_dim(), cfg.vit.num_heads as u32);
    let mut optimizer = AdamW::new(model.params.len(), cfg.train.weight_decay);
    for epoch in 0..cfg.train.total_epochs {
        let stats = train_epoch(&mut model, &mut bank, &train_set, &cfg.train, epoch, &mut optimizer)?;
        println!(
            "epoch {epoch}: loss {:.4}  alpha {:.6}  bank {} facts",
            stats.mean_loss,
            stats.alpha,
            bank.len()
        );
    }

    let with_bank = evaluate(&model, Some(&bank), &test_set, cfg.train.knn_k, cfg.train.batch_size)?;
    println!("\nfull bank:   accuracy {:.4}  auc {:.4}", with_bank.accuracy, with_bank.auc);

    let protos = distill(
        &bank,
        cfg.vit.num_classes,
        cfg.train.tau,
        4, // 4 prototypes per class for the demo
        MmdVariant::Standard,
    )?;
    let with_protos = evaluate(&model, Some(&protos), &test_set, cfg.train.knn_k, cfg.train.batch_size)?;
    println!(
        "prototypes:  accuracy {:.4}  auc {:.4}  ({} facts -> {} prototypes)",
        with_protos.accuracy,
        with_protos.auc,
        bank.len(),
        protos.prototypes.len()
    );
    Ok(())
}
