//! External attention-fact memory: storage, temporal-moving-average
//! updates, the ramp-down coefficient schedule, and binary persistence.

use crate::error::{MovitError, Result};
use crate::tensor::Scalar;
use crate::wire::{fnv1a64, push_f32, push_u32, push_u64, CountingReader};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// One memorized experience: the per-head key/value snapshot of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionFact<T> {
    pub sample_id: u64,
    pub head: u32,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

/// Which side of the moving average the schedule coefficient weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmaOrientation {
    /// Coefficient weights the newly generated fact.
    #[default]
    Paper,
    /// Coefficient weights the stored fact, making memory slowly varying.
    Inverted,
}

impl std::str::FromStr for EmaOrientation {
    type Err = MovitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(EmaOrientation::Paper),
            "inverted" => Ok(EmaOrientation::Inverted),
            other => Err(MovitError::Config(format!(
                "unknown ema orientation `{other}` (expected paper|inverted)"
            ))),
        }
    }
}

/// Ramp-down schedule for the moving-average coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub alpha0: f64,
    /// Ramp length in epochs; the coefficient is flat beyond it.
    pub ramp_epochs: usize,
    pub total_epochs: usize,
}

impl ScheduleState {
    /// Ramp of `fraction` of the total epochs, at least one epoch.
    pub fn new(alpha0: f64, total_epochs: usize, fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) || alpha0 <= 0.0 {
            return Err(MovitError::Contract(format!(
                "alpha0 must lie in (0, 1), got {alpha0}"
            )));
        }
        if total_epochs == 0 {
            return Err(MovitError::Contract("total_epochs must be positive".into()));
        }
        let ramp_epochs = ((total_epochs as f64 * fraction).round() as usize)
            .clamp(1, total_epochs);
        Ok(ScheduleState {
            alpha0,
            ramp_epochs,
            total_epochs,
        })
    }
}

/// Blend coefficient for epoch `t`:
/// `1 − alpha0·exp(−ramp·(1 − t/ramp)²)` while `t ≤ ramp`, then `1 − alpha0`.
pub fn alpha_schedule(t: usize, s: &ScheduleState) -> f64 {
    let ramp = s.ramp_epochs as f64;
    if t as f64 <= ramp {
        let frac = 1.0 - t as f64 / ramp;
        1.0 - s.alpha0 * (-ramp * frac * frac).exp()
    } else {
        1.0 - s.alpha0
    }
}

/// Read access shared by the full memory bank and the distilled
/// prototype bank; retrieval and attention code is agnostic to which
/// one backs it.
pub trait FactStore<T> {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn head_dim(&self) -> usize;
    fn key(&self, index: usize) -> &[T];
    fn value(&self, index: usize) -> &[T];
    /// Sample id of the fact (for prototypes: the source cached index).
    fn sample_id(&self, index: usize) -> u64;
}

/// Borrowed view of one stored fact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactRef<'a, T> {
    pub sample_id: u64,
    pub head: u32,
    pub key: &'a [T],
    pub value: &'a [T],
}

/// Indexed store of attention facts. Facts keep their insertion index
/// for deterministic retrieval order; updates replace contents in place.
/// Keys and values live in flat contiguous buffers so retrieval scans
/// stay cache-friendly.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T> {
    ids: Vec<(u64, u32)>,
    keys: Vec<T>,
    values: Vec<T>,
    slots: HashMap<(u64, u32), usize>,
    head_dim: usize,
    num_heads: u32,
    pub epoch_counter: u32,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(head_dim: usize, num_heads: u32) -> Self {
        MemoryBank {
            ids: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            slots: HashMap::new(),
            head_dim,
            num_heads,
            epoch_counter: 0,
        }
    }

    pub fn num_heads(&self) -> u32 {
        self.num_heads
    }

    pub fn fact(&self, index: usize) -> FactRef<'_, T> {
        let d = self.head_dim;
        let (sample_id, head) = self.ids[index];
        FactRef {
            sample_id,
            head,
            key: &self.keys[index * d..(index + 1) * d],
            value: &self.values[index * d..(index + 1) * d],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FactRef<'_, T>> {
        (0..self.ids.len()).map(|i| self.fact(i))
    }

    /// Flat `[len × head_dim]` key matrix in insertion order.
    pub fn flat_keys(&self) -> &[T] {
        &self.keys
    }

    pub fn get(&self, sample_id: u64, head: u32) -> Option<FactRef<'_, T>> {
        self.slots.get(&(sample_id, head)).map(|&i| self.fact(i))
    }

    /// Inserts a new fact verbatim, or blends it into the stored fact:
    /// `stored = alpha·generated + (1−alpha)·stored`, per component for
    /// key (`alpha_k`) and value (`alpha_v`). The bank never joins a
    /// computation record; callers pass detached copies.
    pub fn cache_or_update(
        &mut self,
        fact: AttentionFact<T>,
        alpha_k: f64,
        alpha_v: f64,
    ) -> Result<()> {
        if fact.key.len() != self.head_dim || fact.value.len() != self.head_dim {
            return Err(MovitError::Contract(format!(
                "fact dimension {}/{} does not match bank head_dim {}",
                fact.key.len(),
                fact.value.len(),
                self.head_dim
            )));
        }
        for (name, a) in [("alpha_k", alpha_k), ("alpha_v", alpha_v)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(MovitError::Contract(format!(
                    "{name} must lie in (0, 1], got {a}"
                )));
            }
        }
        let d = self.head_dim;
        match self.slots.get(&(fact.sample_id, fact.head)) {
            None => {
                self.slots
                    .insert((fact.sample_id, fact.head), self.ids.len());
                self.ids.push((fact.sample_id, fact.head));
                self.keys.extend_from_slice(&fact.key);
                self.values.extend_from_slice(&fact.value);
            }
            Some(&i) => {
                let (ak, ik) = (T::from_f64(alpha_k), T::from_f64(1.0 - alpha_k));
                let (av, iv) = (T::from_f64(alpha_v), T::from_f64(1.0 - alpha_v));
                for (old, &gen) in self.keys[i * d..(i + 1) * d].iter_mut().zip(&fact.key) {
                    *old = ak * gen + ik * *old;
                }
                for (old, &gen) in self.values[i * d..(i + 1) * d].iter_mut().zip(&fact.value) {
                    *old = av * gen + iv * *old;
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> FactStore<T> for MemoryBank<T> {
    fn len(&self) -> usize {
        self.ids.len()
    }
    fn head_dim(&self) -> usize {
        self.head_dim
    }
    fn key(&self, index: usize) -> &[T] {
        &self.keys[index * self.head_dim..(index + 1) * self.head_dim]
    }
    fn value(&self, index: usize) -> &[T] {
        &self.values[index * self.head_dim..(index + 1) * self.head_dim]
    }
    fn sample_id(&self, index: usize) -> u64 {
        self.ids[index].0
    }
}

/// Number of stored facts.
pub fn bank_size<T: Scalar>(bank: &MemoryBank<T>) -> usize {
    bank.len()
}

const BANK_MAGIC: &[u8; 4] = b"MOVB";
const BANK_VERSION: u32 = 1;

impl MemoryBank<f32> {
    /// Serializes the bank in the little-endian record format:
    /// magic, version, head_dim, num_heads, fact count, then per fact
    /// sample_id, head, key floats, value floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + self.ids.len() * (12 + 8 * self.head_dim));
        buf.extend_from_slice(BANK_MAGIC);
        push_u32(&mut buf, BANK_VERSION);
        push_u32(&mut buf, self.head_dim as u32);
        push_u32(&mut buf, self.num_heads);
        push_u64(&mut buf, self.ids.len() as u64);
        for fact in self.iter() {
            push_u64(&mut buf, fact.sample_id);
            push_u32(&mut buf, fact.head);
            for &v in fact.key {
                push_f32(&mut buf, v);
            }
            for &v in fact.value {
                push_f32(&mut buf, v);
            }
        }
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| MovitError::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| MovitError::io(path.display().to_string(), e))
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        let mut r = CountingReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact_at(&mut magic, "magic")?;
        if &magic != BANK_MAGIC {
            return Err(MovitError::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {BANK_MAGIC:?}"),
            });
        }
        let version = r.u32("version")?;
        if version != BANK_VERSION {
            return Err(MovitError::Format {
                offset: 4,
                message: format!("unsupported bank version {version}"),
            });
        }
        let head_dim = r.u32("head_dim")? as usize;
        let num_heads = r.u32("num_heads")?;
        let count = r.u64("fact count")?;
        let mut bank = MemoryBank::new(head_dim, num_heads);
        for i in 0..count {
            let sample_id = r.u64("sample_id")?;
            let head = r.u32("head")?;
            let key = r.f32_vec(head_dim, "key")?;
            let value = r.f32_vec(head_dim, "value")?;
            if bank.slots.contains_key(&(sample_id, head)) {
                return Err(MovitError::Format {
                    offset: r.offset,
                    message: format!("duplicate fact ({sample_id}, {head}) at record {i}"),
                });
            }
            bank.slots.insert((sample_id, head), bank.facts.len());
            bank.facts.push(AttentionFact {
                sample_id,
                head,
                key,
                value,
            });
        }
        Ok(bank)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| MovitError::io(path.display().to_string(), e))?;
        Self::from_reader(BufReader::new(file))
    }

    /// Content checksum over the serialized records (FNV-1a, 64 bit).
    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}
