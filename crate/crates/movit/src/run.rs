//! End-to-end run orchestration behind the command-line entry points:
//! dataset assembly, the training loop with per-epoch metric records,
//! evaluation, distillation, and artifact inspection.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataConfig, RunConfig};
use crate::data::{
    generate_synthetic_dataset, load_image_folder, stratified_fraction, Dataset,
    SyntheticDatasetSpec,
};
use crate::error::{MovitError, Result};
use crate::memory::{FactStore, MemoryBank};
use crate::pal::{distill, mmd_squared, MmdVariant, PrototypeBank};
use crate::train::{evaluate, train_epoch, AdamW, Metrics};
use crate::vit::{ViTConfig, VitModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One line of the metrics stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricsLine {
    Epoch(EpochRecord),
    Summary(RunRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub alpha: f64,
    pub lr: f64,
    pub wall_ms: u64,
    pub test: Option<Metrics>,
}

/// Everything a finished run produced, minus the binary artifacts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub config: BTreeMap<String, String>,
    pub epochs: Vec<EpochRecord>,
    pub final_test: Metrics,
    pub bank_checksum: Option<u64>,
    pub data_fraction: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub checkpoint_path: PathBuf,
    pub bank_path: Option<PathBuf>,
    pub metrics_path: PathBuf,
}

/// Which half of the data a run reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Builds the dataset for a split: an image-folder tree when
/// `data_dir` is set, synthetic generation otherwise. The synthetic
/// test split uses `data_seed + 1` so it never overlaps training data.
pub fn dataset_from_config(data: &DataConfig, vit: &ViTConfig, split: Split) -> Result<Dataset> {
    if let Some(dir) = &data.data_dir {
        let sub = match split {
            Split::Train => dir.join("train"),
            Split::Test => dir.join("test"),
        };
        let ds = load_image_folder(&sub, vit.image_size, vit.in_channels)?;
        if ds.num_classes != vit.num_classes {
            return Err(MovitError::Incompatible(format!(
                "{} holds {} classes but the model expects {}",
                sub.display(),
                ds.num_classes,
                vit.num_classes
            )));
        }
        return Ok(ds);
    }
    if vit.in_channels != 1 {
        return Err(MovitError::Config(
            "synthetic data is single-channel; set in_channels = 1 or provide data_dir".into(),
        ));
    }
    let (per_class, seed) = match split {
        Split::Train => (data.samples_per_class, data.data_seed),
        Split::Test => (data.test_samples_per_class, data.data_seed + 1),
    };
    generate_synthetic_dataset(&SyntheticDatasetSpec {
        num_classes: vit.num_classes,
        samples_per_class: per_class,
        image_size: vit.image_size,
        noise_std: data.noise_std,
        seed,
        generator: data.generator,
    })
}

fn run_stem(seed: u64) -> String {
    let millis = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    format!("run_{millis}_p{}_s{seed}", std::process::id())
}

/// Append-only JSON-lines metrics stream.
pub struct MetricsWriter {
    file: std::fs::File,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: PathBuf) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| MovitError::io(parent.display().to_string(), e))?;
        }
        let file = std::fs::File::create(&path)
            .map_err(|e| MovitError::io(path.display().to_string(), e))?;
        Ok(MetricsWriter { file, path })
    }

    pub fn emit(&mut self, line: &MetricsLine) -> Result<()> {
        let json = serde_json::to_string(line)
            .map_err(|e| MovitError::Config(format!("metrics serialization: {e}")))?;
        writeln!(self.file, "{json}")
            .and_then(|_| self.file.flush())
            .map_err(|e| MovitError::io(self.path.display().to_string(), e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses a metrics stream back; the summary line reproduces the
/// [`RunRecord`] losslessly.
pub fn read_metrics_stream(path: impl AsRef<Path>) -> Result<(Vec<EpochRecord>, Option<RunRecord>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| MovitError::io(path.display().to_string(), e))?;
    let mut epochs = Vec::new();
    let mut summary = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let parsed: MetricsLine = serde_json::from_str(line)
            .map_err(|e| MovitError::Config(format!("bad metrics line: {e}")))?;
        match parsed {
            MetricsLine::Epoch(e) => epochs.push(e),
            MetricsLine::Summary(s) => summary = Some(s),
        }
    }
    Ok((epochs, summary))
}

/// Trains per the config, writing a checkpoint, a bank file (when the
/// memorizing layer is on), and a timestamped metrics stream under
/// `out_dir`.
pub fn run_train(cfg: &RunConfig, out_dir: &Path, quiet: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let full_train = dataset_from_config(&cfg.data, &cfg.vit, Split::Train)?;
    let train_set = stratified_fraction(&full_train, cfg.train.data_fraction, cfg.train.seed)?;
    let test_set = dataset_from_config(&cfg.data, &cfg.vit, Split::Test)?;

    let mut model = VitModel::<f32>::init(cfg.vit.clone(), cfg.train.seed)?;
    let mut bank = MemoryBank::<f32>::new(cfg.vit.head_dim(), cfg.vit.num_heads as u32);
    let mut optimizer = AdamW::new(model.params.len(), cfg.train.weight_decay);
    let movit_on = cfg.vit.movit_layer.is_some();

    std::fs::create_dir_all(out_dir)
        .map_err(|e| MovitError::io(out_dir.display().to_string(), e))?;
    let stem = run_stem(cfg.train.seed);
    let metrics_path = out_dir.join(format!("{stem}.metrics.jsonl"));
    let mut writer = MetricsWriter::create(metrics_path.clone())?;

    let mut epochs = Vec::with_capacity(cfg.train.total_epochs);
    let mut final_test: Option<Metrics> = None;
    for epoch in 0..cfg.train.total_epochs {
        let started = Instant::now();
        let stats = train_epoch(&mut model, &mut bank, &train_set, &cfg.train, epoch, &mut optimizer)?;
        let last = epoch + 1 == cfg.train.total_epochs;
        let do_eval = last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let test = if do_eval {
            let store: Option<&dyn FactStore<f32>> = if movit_on { Some(&bank) } else { None };
            let m = evaluate(&model, store, &test_set, cfg.train.knn_k, cfg.train.batch_size)?;
            if last {
                final_test = Some(m);
            }
            Some(m)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            alpha: stats.alpha,
            lr: stats.lr,
            wall_ms: started.elapsed().as_millis() as u64,
            test,
        };
        if !quiet {
            match &record.test {
                Some(m) => eprintln!(
                    "epoch {epoch:3}  loss {:.4}  alpha {:.6}  test acc {:.4}",
                    record.train_loss, record.alpha, m.accuracy
                ),
                None => eprintln!(
                    "epoch {epoch:3}  loss {:.4}  alpha {:.6}",
                    record.train_loss, record.alpha
                ),
            }
        }
        writer.emit(&MetricsLine::Epoch(record.clone()))?;
        epochs.push(record);
    }

    let checkpoint_path = out_dir.join(format!("{stem}.movc"));
    save_checkpoint(&model, &checkpoint_path)?;
    let bank_path = if movit_on {
        let p = out_dir.join(format!("{stem}.movb"));
        bank.save(&p)?;
        Some(p)
    } else {
        None
    };

    let record = RunRecord {
        config: cfg.snapshot(),
        epochs,
        final_test: final_test.expect("last epoch always evaluates"),
        bank_checksum: movit_on.then(|| bank.checksum()),
        data_fraction: cfg.train.data_fraction,
    };
    writer.emit(&MetricsLine::Summary(record.clone()))?;
    Ok(RunOutcome {
        record,
        checkpoint_path,
        bank_path,
        metrics_path,
    })
}

/// Memory artifact selection for evaluation.
#[derive(Debug, Clone)]
pub enum StoreChoice {
    None,
    Bank(PathBuf),
    Prototypes(PathBuf),
}

/// Evaluates a checkpoint against the configured test split, reading
/// memory from a bank or prototype file when given.
pub fn run_eval(
    checkpoint: &Path,
    store: &StoreChoice,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<Metrics> {
    let model = load_checkpoint(checkpoint)?;
    let loaded_bank;
    let loaded_protos;
    let store_ref: Option<&dyn FactStore<f32>> = match store {
        StoreChoice::None => {
            if model.cfg.movit_layer.is_some() {
                return Err(MovitError::Config(
                    "this checkpoint has a memorizing layer; pass --bank or --prototypes".into(),
                ));
            }
            None
        }
        StoreChoice::Bank(path) => {
            loaded_bank = MemoryBank::<f32>::load(path)?;
            Some(&loaded_bank)
        }
        StoreChoice::Prototypes(path) => {
            loaded_protos = PrototypeBank::<f32>::load(path)?;
            Some(&loaded_protos)
        }
    };
    if let Some(s) = store_ref {
        if s.head_dim() != model.cfg.head_dim() {
            return Err(MovitError::Incompatible(format!(
                "memory head_dim {} does not match checkpoint head_dim {}",
                s.head_dim(),
                model.cfg.head_dim()
            )));
        }
    }
    let test_set = dataset_from_config(&cfg.data, &model.cfg, Split::Test)?;
    let metrics = evaluate(
        &model,
        store_ref,
        &test_set,
        cfg.train.knn_k,
        cfg.train.batch_size,
    )?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| MovitError::io(dir.display().to_string(), e))?;
        let path = dir.join(format!("eval_{}.json", run_stem(cfg.train.seed)));
        let json = serde_json::to_string_pretty(&metrics)
            .map_err(|e| MovitError::Config(format!("metrics serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| MovitError::io(path.display().to_string(), e))?;
    }
    Ok(metrics)
}

#[derive(Debug)]
pub struct DistillReport {
    pub facts: usize,
    pub prototypes: usize,
    pub compression_ratio: f64,
    /// Squared MMD of the first-P naive subset, for comparison.
    pub mmd_naive: f64,
    /// Squared MMD achieved by the greedy selection.
    pub mmd_selected: f64,
    pub out_path: PathBuf,
}

/// Distills a bank file into a prototype file and reports the achieved
/// MMD² against a naive first-P baseline plus the compression ratio.
pub fn run_distill(
    bank_path: &Path,
    out_path: &Path,
    num_classes: usize,
    tau: f64,
    multiplier: usize,
    variant: MmdVariant,
) -> Result<DistillReport> {
    let bank = MemoryBank::<f32>::load(bank_path)?;
    let protos = distill(&bank, num_classes, tau, multiplier, variant)?;
    let m = bank.len();
    let p = protos.prototypes.len();
    let all_keys: Vec<&[f32]> = (0..m).map(|i| bank.key(i)).collect();
    let selected_keys: Vec<&[f32]> = protos.prototypes.iter().map(|pr| pr.key.as_slice()).collect();
    let naive_keys: Vec<&[f32]> = all_keys[..p].to_vec();
    let mmd_naive = mmd_squared(&naive_keys, &all_keys, variant)?;
    let mmd_selected = mmd_squared(&selected_keys, &all_keys, variant)?;
    protos.save(out_path)?;
    Ok(DistillReport {
        facts: m,
        prototypes: p,
        compression_ratio: m as f64 / p as f64,
        mmd_naive,
        mmd_selected,
        out_path: out_path.to_path_buf(),
    })
}

/// Human-readable summary of a bank, prototype, or checkpoint file.
pub fn inspect_artifact(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).map_err(|e| MovitError::io(path.display().to_string(), e))?;
    if bytes.len() < 4 {
        return Err(MovitError::Format {
            offset: 0,
            message: "file too short for a magic header".into(),
        });
    }
    let magic = &bytes[..4];
    let mut out = String::new();
    match magic {
        b"MOVB" => {
            let bank = MemoryBank::<f32>::from_reader(&bytes[..])?;
            out.push_str(&format!("bank: {}\n", path.display()));
            out.push_str(&format!("facts: {}\n", bank.len()));
            out.push_str(&format!("head_dim: {}\n", bank.head_dim()));
            out.push_str(&format!("num_heads: {}\n", bank.num_heads()));
            out.push_str(&format!("checksum: {:016x}\n", bank.checksum()));
            for f in bank.facts().iter().take(3) {
                let knorm: f32 = f.key.iter().map(|v| v * v).sum::<f32>().sqrt();
                let vnorm: f32 = f.value.iter().map(|v| v * v).sum::<f32>().sqrt();
                out.push_str(&format!(
                    "  fact sample={} head={} |k|={knorm:.4} |v|={vnorm:.4}\n",
                    f.sample_id, f.head
                ));
            }
        }
        b"MOVP" => {
            let protos = PrototypeBank::<f32>::from_reader(&bytes[..])?;
            out.push_str(&format!("prototypes: {}\n", path.display()));
            out.push_str(&format!("count: {}\n", protos.prototypes.len()));
            out.push_str(&format!("head_dim: {}\n", protos.head_dim));
            out.push_str(&format!("num_heads: {}\n", protos.num_heads));
            out.push_str(&format!("tau: {}\n", protos.tau));
            out.push_str(&format!("checksum: {:016x}\n", protos.checksum()));
        }
        b"MOVC" => {
            let model = crate::checkpoint::checkpoint_from_reader(&bytes[..])?;
            out.push_str(&format!("checkpoint: {}\n", path.display()));
            out.push_str(&format!(
                "blocks: {} ({} parameters)\n",
                model.params.len(),
                model.params.iter().map(|p| p.data.len()).sum::<usize>()
            ));
            out.push_str(&format!(
                "checksum: {:016x}\n",
                crate::checkpoint::checkpoint_checksum(&model)
            ));
            out.push_str("model config:\n");
            for line in crate::config::vit_to_kv(&model.cfg).lines() {
                out.push_str(&format!("  {line}\n"));
            }
        }
        other => {
            return Err(MovitError::Format {
                offset: 0,
                message: format!("unknown magic {other:?}"),
            });
        }
    }
    Ok(out)
}

/// Writes a fresh default config file.
pub fn write_default_config(path: &Path) -> Result<()> {
    std::fs::write(path, RunConfig::default().to_kv())
        .map_err(|e| MovitError::io(path.display().to_string(), e))
}
