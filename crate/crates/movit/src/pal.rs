//! Prototype distillation: compress a trained memory bank into a small
//! set of representative (key, value) facts by greedy MMD-minimizing key
//! selection and temperature-softmax value aggregation.

use crate::error::{MovitError, Result};
use crate::memory::{FactStore, MemoryBank};
use crate::tensor::Scalar;
use crate::wire::{fnv1a64, push_f32, push_u32, push_u64, CountingReader};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Cross-term coefficient of the squared-MMD estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MmdVariant {
    /// Coefficient 2/(P·M); vanishes on identical sets.
    #[default]
    Standard,
    /// Coefficient 1/(P·M); nonzero self-distance.
    Paper,
}

impl MmdVariant {
    fn cross_coefficient(self) -> f64 {
        match self {
            MmdVariant::Standard => 2.0,
            MmdVariant::Paper => 1.0,
        }
    }
}

impl std::str::FromStr for MmdVariant {
    type Err = MovitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(MmdVariant::Standard),
            "paper" => Ok(MmdVariant::Paper),
            other => Err(MovitError::Config(format!(
                "unknown mmd variant `{other}` (expected standard|paper)"
            ))),
        }
    }
}

/// A distilled (key, value) pair. The key is an exact copy of a cached
/// key; the value is a convex combination of cached values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T> {
    /// Index of the cached fact whose key was selected.
    pub source_index: u64,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

/// The distilled prototype set. Implements [`FactStore`], so retrieval
/// treats it as a drop-in replacement for the full bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<T> {
    pub prototypes: Vec<Prototype<T>>,
    pub head_dim: usize,
    pub num_heads: u32,
    pub tau: f64,
    /// Checksum of the bank this was distilled from; zero when loaded
    /// from a file (the format does not carry it).
    pub source_bank_hash: u64,
}

impl<T: Scalar> FactStore<T> for PrototypeBank<T> {
    fn len(&self) -> usize {
        self.prototypes.len()
    }
    fn head_dim(&self) -> usize {
        self.head_dim
    }
    fn key(&self, index: usize) -> &[T] {
        &self.prototypes[index].key
    }
    fn value(&self, index: usize) -> &[T] {
        &self.prototypes[index].value
    }
    fn sample_id(&self, index: usize) -> u64 {
        self.prototypes[index].source_index
    }
}

fn unit_f64<T: Scalar>(v: &[T], what: &str) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MovitError::Contract(format!(
            "{what} has zero or non-finite norm; cosine similarity undefined"
        )));
    }
    for x in &mut out {
        *x /= norm;
    }
    Ok(out)
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared MMD between a prototype key set and the full cached key set,
/// with cosine similarity as the kernel.
pub fn mmd_squared<T: Scalar>(
    proto_keys: &[&[T]],
    all_keys: &[&[T]],
    variant: MmdVariant,
) -> Result<f64> {
    let p = proto_keys.len();
    let m = all_keys.len();
    if p == 0 || m == 0 {
        return Err(MovitError::Contract(
            "mmd_squared requires nonempty key sets".into(),
        ));
    }
    let pu: Vec<Vec<f64>> = proto_keys
        .iter()
        .map(|k| unit_f64(*k, "prototype key"))
        .collect::<Result<_>>()?;
    let mu: Vec<Vec<f64>> = all_keys
        .iter()
        .map(|k| unit_f64(*k, "cached key"))
        .collect::<Result<_>>()?;
    let mut self_p = 0.0;
    for a in &pu {
        for b in &pu {
            self_p += dot64(a, b);
        }
    }
    let mut cross = 0.0;
    for a in &pu {
        for b in &mu {
            cross += dot64(a, b);
        }
    }
    let mut self_m = 0.0;
    for a in &mu {
        for b in &mu {
            self_m += dot64(a, b);
        }
    }
    let coef = variant.cross_coefficient();
    Ok(self_p / (p * p) as f64 - coef * cross / (p * m) as f64 + self_m / (m * m) as f64)
}

/// Greedy selection of `p` cached keys minimizing the squared MMD to the
/// full key set. Each step evaluates every unselected candidate with
/// running sums (O(P + M) per candidate) and keeps the argmin, breaking
/// ties toward the lowest candidate index. Returns indices in selection
/// order.
pub fn greedy_select_prototypes<T: Scalar>(
    keys: &[&[T]],
    p: usize,
    variant: MmdVariant,
) -> Result<Vec<usize>> {
    let m = keys.len();
    if p == 0 || p > m {
        return Err(MovitError::Contract(format!(
            "prototype count {p} must lie in 1..={m}"
        )));
    }
    let units: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| unit_f64(*k, "cached key"))
        .collect::<Result<_>>()?;

    // rowsum[c] = Σ_j D(c, j); reused by every step.
    let mut rowsum = vec![0.0f64; m];
    for (c, uc) in units.iter().enumerate() {
        rowsum[c] = units.iter().map(|uj| dot64(uc, uj)).sum();
    }
    let total_mm: f64 = rowsum.iter().sum();
    let term3 = total_mm / (m * m) as f64;
    let coef = variant.cross_coefficient();

    let mut selected = Vec::with_capacity(p);
    let mut taken = vec![false; m];
    // Σ over selected pairs (including self pairs) of D.
    let mut sum_pp = 0.0f64;
    // Σ_{i in selected} rowsum[i].
    let mut sum_cross = 0.0f64;
    // cross_to_sel[c] = Σ_{i in selected} D(c, i).
    let mut cross_to_sel = vec![0.0f64; m];

    for step in 0..p {
        let p_next = (step + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for c in 0..m {
            if taken[c] {
                continue;
            }
            let self_c = dot64(&units[c], &units[c]);
            let term1 = (sum_pp + 2.0 * cross_to_sel[c] + self_c) / (p_next * p_next);
            let term2 = coef * (sum_cross + rowsum[c]) / (p_next * m as f64);
            let objective = term1 - term2 + term3;
            let better = match best {
                None => true,
                Some((b, _)) => objective < b,
            };
            if better {
                best = Some((objective, c));
            }
        }
        let (_, chosen) = best.expect("at least one unselected candidate");
        taken[chosen] = true;
        sum_pp += 2.0 * cross_to_sel[chosen] + dot64(&units[chosen], &units[chosen]);
        sum_cross += rowsum[chosen];
        for c in 0..m {
            cross_to_sel[c] += dot64(&units[c], &units[chosen]);
        }
        selected.push(chosen);
    }
    Ok(selected)
}

/// Derives each prototype's value as the softmax-weighted average of all
/// cached values, anchored at the cached value paired with the selected
/// key: `w_j ∝ exp(D(v_j, anchor)/tau)`.
pub fn aggregate_values<T: Scalar>(
    selected: &[usize],
    values: &[&[T]],
    tau: f64,
) -> Result<Vec<Vec<T>>> {
    if tau <= 0.0 {
        return Err(MovitError::Contract(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let units: Vec<Vec<f64>> = values
        .iter()
        .map(|v| unit_f64(*v, "cached value"))
        .collect::<Result<_>>()?;
    let dim = values.first().map_or(0, |v| v.len());
    let mut out = Vec::with_capacity(selected.len());
    for &s in selected {
        let anchor = &units[s];
        let mut logits: Vec<f64> = units.iter().map(|u| dot64(u, anchor) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            sum += *l;
        }
        let mut blended = vec![0.0f64; dim];
        for (w, v) in logits.iter().zip(values) {
            let w = w / sum;
            for (b, x) in blended.iter_mut().zip(v.iter()) {
                *b += w * x.as_f64();
            }
        }
        out.push(blended.into_iter().map(T::from_f64).collect());
    }
    Ok(out)
}

/// Distills a trained bank into `num_classes × multiplier` prototypes.
pub fn distill<T: Scalar>(
    bank: &MemoryBank<T>,
    num_classes: usize,
    tau: f64,
    multiplier: usize,
    variant: MmdVariant,
) -> Result<PrototypeBank<T>>
where
    MemoryBank<T>: BankHash,
{
    if bank.is_empty() {
        return Err(MovitError::Contract("cannot distill an empty bank".into()));
    }
    if num_classes == 0 {
        return Err(MovitError::Contract("num_classes must be positive".into()));
    }
    let m = bank.len();
    let p = num_classes * multiplier;
    if p > m {
        return Err(MovitError::Contract(format!(
            "requested {p} prototypes (= {num_classes} classes × {multiplier}) but the bank \
             holds only {m} facts; lower the prototype multiplier"
        )));
    }
    let keys: Vec<&[T]> = (0..m).map(|i| bank.key(i)).collect();
    let values: Vec<&[T]> = (0..m).map(|i| bank.value(i)).collect();
    let selected = greedy_select_prototypes(&keys, p, variant)?;
    let blended = aggregate_values(&selected, &values, tau)?;
    let prototypes = selected
        .iter()
        .zip(blended)
        .map(|(&idx, value)| Prototype {
            source_index: idx as u64,
            key: bank.key(idx).to_vec(),
            value,
        })
        .collect();
    Ok(PrototypeBank {
        prototypes,
        head_dim: bank.head_dim(),
        num_heads: bank.num_heads(),
        tau,
        source_bank_hash: bank.content_hash(),
    })
}

/// Content hashing for distillation provenance.
pub trait BankHash {
    fn content_hash(&self) -> u64;
}

impl BankHash for MemoryBank<f32> {
    fn content_hash(&self) -> u64 {
        self.checksum()
    }
}

impl BankHash for MemoryBank<f64> {
    fn content_hash(&self) -> u64 {
        // Hash the f64 payload directly; the f32 record format is not
        // authoritative for double-precision banks.
        let mut bytes = Vec::with_capacity(self.len() * self.head_dim() * 16);
        for f in self.facts() {
            bytes.extend_from_slice(&f.sample_id.to_le_bytes());
            bytes.extend_from_slice(&f.head.to_le_bytes());
            for v in f.key.iter().chain(&f.value) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

const PROTO_MAGIC: &[u8; 4] = b"MOVP";
const PROTO_VERSION: u32 = 1;

impl PrototypeBank<f32> {
    /// Same record layout as the bank format, with `MOVP` magic and the
    /// extra header fields `tau` (f32) and `P` (u32); `sample_id` carries
    /// the source cached index of each prototype key.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(PROTO_MAGIC);
        push_u32(&mut buf, PROTO_VERSION);
        push_u32(&mut buf, self.head_dim as u32);
        push_u32(&mut buf, self.num_heads);
        push_u64(&mut buf, self.prototypes.len() as u64);
        push_f32(&mut buf, self.tau as f32);
        push_u32(&mut buf, self.prototypes.len() as u32);
        for proto in &self.prototypes {
            push_u64(&mut buf, proto.source_index);
            push_u32(&mut buf, 0); // head slot unused for prototypes
            for &v in &proto.key {
                push_f32(&mut buf, v);
            }
            for &v in &proto.value {
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
        if &magic != PROTO_MAGIC {
            return Err(MovitError::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected {PROTO_MAGIC:?}"),
            });
        }
        let version = r.u32("version")?;
        if version != PROTO_VERSION {
            return Err(MovitError::Format {
                offset: 4,
                message: format!("unsupported prototype version {version}"),
            });
        }
        let head_dim = r.u32("head_dim")? as usize;
        let num_heads = r.u32("num_heads")?;
        let count = r.u64("prototype count")?;
        let tau = r.f32("tau")? as f64;
        let p = r.u32("P")?;
        if u64::from(p) != count {
            return Err(MovitError::Format {
                offset: r.offset - 4,
                message: format!("P field {p} disagrees with record count {count}"),
            });
        }
        let mut prototypes = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let source_index = r.u64("source_index")?;
            let _head = r.u32("head")?;
            let key = r.f32_vec(head_dim, "key")?;
            let value = r.f32_vec(head_dim, "value")?;
            prototypes.push(Prototype {
                source_index,
                key,
                value,
            });
        }
        Ok(PrototypeBank {
            prototypes,
            head_dim,
            num_heads,
            tau,
            source_bank_hash: 0,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| MovitError::io(path.display().to_string(), e))?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn checksum(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::AttentionFact;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn mmd_of_set_with_itself_is_zero() {
        let keys = [e(0, 3), e(1, 3), vec![0.5, 0.5, 0.0]];
        let refs: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
        let v = mmd_squared(&refs, &refs, MmdVariant::Standard).unwrap();
        assert!(v.abs() < 1e-6, "got {v}");
    }

    #[test]
    fn mmd_worked_example() {
        // proto {e1}, all {e1, e2}: 1 − 2·(1/2)(1+0) + (1/4)(1+0+0+1) = 0.5
        let e1 = e(0, 2);
        let e2 = e(1, 2);
        let proto: Vec<&[f64]> = vec![&e1];
        let all: Vec<&[f64]> = vec![&e1, &e2];
        let v = mmd_squared(&proto, &all, MmdVariant::Standard).unwrap();
        assert!((v - 0.5).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn paper_variant_nonzero_self_distance() {
        // proto {e1}, all {e1}: 1 − 1 + 1 = 1
        let e1 = e(0, 2);
        let proto: Vec<&[f64]> = vec![&e1];
        let v = mmd_squared(&proto, &proto, MmdVariant::Paper).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn zero_norm_key_is_contract_error() {
        let z = vec![0.0, 0.0];
        let e1 = e(0, 2);
        let proto: Vec<&[f64]> = vec![&e1];
        let all: Vec<&[f64]> = vec![&e1, &z];
        assert!(matches!(
            mmd_squared(&proto, &all, MmdVariant::Standard),
            Err(MovitError::Contract(_))
        ));
    }

    #[test]
    fn greedy_prefers_duplicated_direction() {
        // {e1, e1, e2}: singleton e1 scores 2/9, e2 scores 8/9
        let keys = [e(0, 2), e(0, 2), e(1, 2)];
        let refs: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
        let sel = greedy_select_prototypes(&refs, 1, MmdVariant::Standard).unwrap();
        assert_eq!(sel, vec![0]);
        let s0 = mmd_squared(&refs[0..1], &refs, MmdVariant::Standard).unwrap();
        let s2 = mmd_squared(&refs[2..3], &refs, MmdVariant::Standard).unwrap();
        assert!((s0 - 2.0 / 9.0).abs() < 1e-9);
        assert!((s2 - 8.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn full_selection_reaches_zero_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keys: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
        let sel = greedy_select_prototypes(&refs, 6, MmdVariant::Standard).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
        let proto: Vec<&[f64]> = sel.iter().map(|&i| refs[i]).collect();
        let v = mmd_squared(&proto, &refs, MmdVariant::Standard).unwrap();
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn single_step_greedy_equals_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = rng.random_range(2..10);
            let dim = rng.random_range(2..5);
            let keys: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect())
                .collect();
            let refs: Vec<&[f64]> = keys.iter().map(|k| k.as_slice()).collect();
            let sel = greedy_select_prototypes(&refs, 1, MmdVariant::Standard).unwrap();
            let mut best = (f64::INFINITY, usize::MAX);
            for c in 0..m {
                let v = mmd_squared(&refs[c..=c], &refs, MmdVariant::Standard).unwrap();
                if v < best.0 {
                    best = (v, c);
                }
            }
            assert_eq!(sel[0], best.1);
        }
    }

    #[test]
    fn aggregate_identical_values_returns_them() {
        let v = vec![vec![0.3f64, -0.7], vec![0.3, -0.7], vec![0.3, -0.7]];
        let refs: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        let out = aggregate_values(&[1], &refs, 0.5).unwrap();
        assert!((out[0][0] - 0.3).abs() < 1e-12);
        assert!((out[0][1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn aggregate_worked_example() {
        // values {[1,0],[0,1]}, anchor [1,0], tau=0.5 → softmax([2,0])
        let v = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
        let refs: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        let out = aggregate_values(&[0], &refs, 0.5).unwrap();
        let w0 = (2.0f64).exp() / ((2.0f64).exp() + 1.0);
        assert!((out[0][0] - w0).abs() < 1e-9);
        assert!((out[0][1] - (1.0 - w0)).abs() < 1e-9);
        assert!((w0 - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn aggregate_high_temperature_limit_is_mean() {
        let v = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
        let refs: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        let out = aggregate_values(&[0], &refs, 1e6).unwrap();
        assert!((out[0][0] - 0.5).abs() < 1e-5);
        assert!((out[0][1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn aggregate_stays_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let values: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0) + 0.01).collect())
            .collect();
        let refs: Vec<&[f64]> = values.iter().map(|x| x.as_slice()).collect();
        let out = aggregate_values(&[0, 5, 11], &refs, 0.5).unwrap();
        for d in 0..3 {
            let lo = values.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            for proto in &out {
                assert!(proto[d] >= lo - 1e-9 && proto[d] <= hi + 1e-9);
            }
        }
    }

    fn random_bank(m: u64, dim: usize, seed: u64) -> MemoryBank<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = MemoryBank::new(dim, 1);
        for i in 0..m {
            bank.cache_or_update(
                AttentionFact {
                    sample_id: i,
                    head: 0,
                    key: (0..dim).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect(),
                    value: (0..dim).map(|_| rng.random_range(-1.0..1.0) + 0.01).collect(),
                },
                1.0,
                1.0,
            )
            .unwrap();
        }
        bank
    }

    #[test]
    fn distill_prototype_counts() {
        let bank = random_bank(300, 4, 5);
        // 9 classes × 32 would need 288 facts
        let pb = distill(&bank, 9, 0.5, 32, MmdVariant::Standard).unwrap();
        assert_eq!(pb.prototypes.len(), 288);
        let pb2 = distill(&bank, 2, 0.5, 32, MmdVariant::Standard).unwrap();
        assert_eq!(pb2.prototypes.len(), 64);
    }

    #[test]
    fn distill_rejects_oversized_request() {
        let bank = random_bank(50, 4, 6);
        let err = distill(&bank, 2, 0.5, 32, MmdVariant::Standard).unwrap_err();
        match err {
            MovitError::Contract(msg) => assert!(msg.contains("multiplier"), "{msg}"),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn distill_is_deterministic_and_keys_are_copies() {
        let bank = random_bank(40, 4, 7);
        let a = distill(&bank, 1, 0.5, 8, MmdVariant::Standard).unwrap();
        let b = distill(&bank, 1, 0.5, 8, MmdVariant::Standard).unwrap();
        assert_eq!(a, b);
        for proto in &a.prototypes {
            assert_eq!(proto.key, bank.key(proto.source_index as usize));
        }
    }

    #[test]
    fn prototype_round_trip() {
        let bank = random_bank(40, 3, 8);
        let pb = distill(&bank, 1, 0.5, 4, MmdVariant::Standard).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("protos.movp");
        pb.save(&path).unwrap();
        let loaded = PrototypeBank::<f32>::load(&path).unwrap();
        assert_eq!(loaded.prototypes, pb.prototypes);
        assert_eq!(loaded.tau, pb.tau);
        assert_eq!(loaded.checksum(), pb.checksum());
    }
}
