//! The memorizing attention block: local multi-head self-attention plus
//! kNN-retrieved attention over an external fact store, fused per head
//! by a learned sigmoid gate.

use crate::error::{MovitError, Result};
use crate::memory::{AttentionFact, FactStore};
use crate::tensor::{dot, Scalar, Tape, TensorId};
use crate::vit::{
    combine_heads, local_head_attention, qkv_heads, AttentionParams, CacheToken, Mode,
    TokenSequence,
};
use std::cmp::Ordering;

/// Retrieval strategy. `Approx` scans per-block shortlists; it matches
/// `Exact` (including tie order) on every bank size used at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnMode {
    #[default]
    Exact,
    Approx,
}

impl std::str::FromStr for KnnMode {
    type Err = MovitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(KnnMode::Exact),
            "approx" => Ok(KnnMode::Approx),
            other => Err(MovitError::Config(format!(
                "unknown knn mode `{other}` (expected exact|approx)"
            ))),
        }
    }
}

/// One retrieved fact with its provenance and similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<T> {
    pub bank_index: usize,
    pub score: T,
    pub key: Vec<T>,
    pub value: Vec<T>,
}

/// Top-k facts per query, scores non-increasing, ties broken toward the
/// lower bank index. Every query holds the same number of pairs:
/// `min(knn_k, candidate count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult<T> {
    pub per_query: Vec<Vec<Retrieved<T>>>,
    pub head_dim: usize,
}

impl<T> RetrievalResult<T> {
    pub fn pairs_per_query(&self) -> usize {
        self.per_query.first().map_or(0, |q| q.len())
    }
}

fn better<T: Scalar>(a: (T, usize), b: (T, usize)) -> Ordering {
    // Higher score first, then lower index.
    match b.0.partial_cmp(&a.0) {
        Some(Ordering::Equal) | None => a.1.cmp(&b.1),
        Some(ord) => ord,
    }
}

const APPROX_BLOCK: usize = 1024;

fn top_k_of<T: Scalar>(scored: &mut Vec<(T, usize)>, k: usize) {
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |&a, &b| better(a, b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|&a, &b| better(a, b));
}

/// Inner-product top-k lookup of each query against the store's keys.
/// `exclude_sample` drops facts whose sample id matches (training-time
/// self-retrieval guard).
pub fn knn_lookup<T: Scalar>(
    queries: &[T],
    num_queries: usize,
    store: &dyn FactStore<T>,
    knn_k: usize,
    mode: KnnMode,
    exclude_sample: Option<u64>,
) -> Result<RetrievalResult<T>> {
    if knn_k == 0 {
        return Err(MovitError::Contract("knn_k must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(MovitError::Retrieval("lookup against an empty bank".into()));
    }
    let d = store.head_dim();
    if num_queries == 0 || queries.len() != num_queries * d {
        return Err(MovitError::ShapeMismatch {
            op: "knn_lookup",
            lhs: vec![queries.len()],
            rhs: vec![num_queries, d],
        });
    }
    let candidates: Vec<usize> = (0..store.len())
        .filter(|&i| exclude_sample != Some(store.sample_id(i)))
        .collect();
    if candidates.is_empty() {
        return Err(MovitError::Retrieval(
            "every fact excluded from the lookup".into(),
        ));
    }
    let k = knn_k.min(candidates.len());
    let mut per_query = Vec::with_capacity(num_queries);
    for qi in 0..num_queries {
        let q = &queries[qi * d..(qi + 1) * d];
        let ranked = match mode {
            KnnMode::Exact => {
                let mut scored: Vec<(T, usize)> = candidates
                    .iter()
                    .map(|&i| (dot(q, store.key(i)), i))
                    .collect();
                top_k_of(&mut scored, k);
                scored
            }
            KnnMode::Approx => {
                // Shortlist the top-k of each block under the identical
                // comparator; the global winners always survive.
                let mut shortlist: Vec<(T, usize)> = Vec::new();
                for block in candidates.chunks(APPROX_BLOCK) {
                    let mut scored: Vec<(T, usize)> =
                        block.iter().map(|&i| (dot(q, store.key(i)), i)).collect();
                    top_k_of(&mut scored, k);
                    shortlist.extend(scored);
                }
                top_k_of(&mut shortlist, k);
                shortlist
            }
        };
        per_query.push(
            ranked
                .into_iter()
                .map(|(score, i)| Retrieved {
                    bank_index: i,
                    score,
                    key: store.key(i).to_vec(),
                    value: store.value(i).to_vec(),
                })
                .collect(),
        );
    }
    Ok(RetrievalResult {
        per_query,
        head_dim: d,
    })
}

/// Attention of each query over its retrieved pairs: softmax of the
/// scaled dot products, then the weighted sum of retrieved values.
/// Differentiable with respect to the queries only.
pub fn memory_attention<T: Scalar>(
    tape: &mut Tape<T>,
    queries: TensorId,
    retrieved: &RetrievalResult<T>,
) -> Result<TensorId> {
    let t = tape.shape(queries)[0];
    let d = retrieved.head_dim;
    if retrieved.per_query.len() != t {
        return Err(MovitError::Contract(format!(
            "retrieval holds {} queries, tensor holds {t}",
            retrieved.per_query.len()
        )));
    }
    let per = retrieved.pairs_per_query();
    let mut keys = Vec::with_capacity(t * per * d);
    let mut values = Vec::with_capacity(t * per * d);
    for row in &retrieved.per_query {
        if row.len() != per {
            return Err(MovitError::Contract(
                "uneven retrieval counts across queries".into(),
            ));
        }
        for r in row {
            keys.extend_from_slice(&r.key);
            values.extend_from_slice(&r.value);
        }
    }
    tape.memory_attention(queries, keys, values, per)
}

/// Per-head gate fusion: `sigmoid(bias_h)·memory + (1−sigmoid(bias_h))·local`.
pub fn gated_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    local: TensorId,
    memory: TensorId,
    gate_bias: TensorId,
    head: usize,
) -> Result<TensorId> {
    if tape.shape(local) != tape.shape(memory) {
        return Err(MovitError::ShapeMismatch {
            op: "gated_fuse",
            lhs: tape.shape(local).to_vec(),
            rhs: tape.shape(memory).to_vec(),
        });
    }
    let bias_h = tape.slice_cols(gate_bias, head, 1)?;
    let g = tape.sigmoid(bias_h)?;
    let from_memory = tape.scale_by(memory, g)?;
    let one_minus_g = tape.affine(g, -1.0, 1.0)?;
    let from_local = tape.scale_by(local, one_minus_g)?;
    tape.add(from_memory, from_local)
}

/// Retrieval and fusion context of the memorizing block.
pub struct MovitBlockContext<'a, T> {
    pub store: Option<&'a dyn FactStore<T>>,
    /// Bound `[1, num_heads]` gate-bias leaf.
    pub gate: TensorId,
    pub mode: Mode,
    pub knn_k: usize,
    /// Per-item sample ids (train mode).
    pub sample_ids: &'a [u64],
    pub cache_token: CacheToken,
}

fn emitted_fact<T: Scalar>(
    tape: &Tape<T>,
    k: TensorId,
    v: TensorId,
    sample_id: u64,
    head: u32,
    cache_token: CacheToken,
) -> AttentionFact<T> {
    let d = tape.shape(k)[1];
    let rows = tape.shape(k)[0];
    let pick = |data: &[T]| -> Vec<T> {
        match cache_token {
            CacheToken::Cls => data[..d].to_vec(),
            CacheToken::Mean => {
                let mut mean = vec![T::zero(); d];
                for row in data.chunks(d) {
                    for (m, &x) in mean.iter_mut().zip(row) {
                        *m += x;
                    }
                }
                let n = T::from_f64(rows as f64);
                mean.iter_mut().for_each(|m| *m = *m / n);
                mean
            }
        }
    };
    AttentionFact {
        sample_id,
        head,
        key: pick(tape.data(k)),
        value: pick(tape.data(v)),
    }
}

/// Forward pass of the memorizing block. Local attention always runs;
/// once a nonempty store is available the same queries also retrieve
/// from memory and the two paths are gate-fused per head. In train mode
/// each head emits one detached (key, value) fact per sample.
pub fn movit_block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: &TokenSequence,
    params: &AttentionParams,
    num_heads: usize,
    ctx: &MovitBlockContext<'_, T>,
) -> Result<(TokenSequence, Vec<AttentionFact<T>>)> {
    if ctx.mode == Mode::Infer {
        match ctx.store {
            None => {
                return Err(MovitError::Config(
                    "memorizing block inference requires a bank".into(),
                ))
            }
            Some(s) if s.is_empty() => {
                return Err(MovitError::Config(
                    "memorizing block inference requires a nonempty bank".into(),
                ))
            }
            _ => {}
        }
    }
    if ctx.mode == Mode::Train && ctx.sample_ids.len() != x.batch {
        return Err(MovitError::Contract(format!(
            "need one sample id per batch item ({} != {})",
            ctx.sample_ids.len(),
            x.batch
        )));
    }

    let heads = qkv_heads(tape, x, params, num_heads)?;
    let mut emissions = Vec::new();
    let mut outputs = Vec::with_capacity(x.batch);
    for b in 0..x.batch {
        let exclude = match ctx.mode {
            Mode::Train => Some(ctx.sample_ids[b]),
            Mode::Infer => None,
        };
        // Memory participates once at least one non-excluded fact exists.
        let memory_live = match ctx.store {
            Some(s) if !s.is_empty() => match exclude {
                Some(id) => (0..s.len()).any(|i| s.sample_id(i) != id),
                None => true,
            },
            _ => false,
        };
        let mut per_head = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let (q, k, v) = (heads.q[b][h], heads.k[b][h], heads.v[b][h]);
            let local = local_head_attention(tape, q, k, v)?;
            let fused = if memory_live {
                let store = ctx.store.expect("checked above");
                let retrieved = knn_lookup(
                    tape.data(q),
                    x.seq_len,
                    store,
                    ctx.knn_k,
                    KnnMode::Exact,
                    exclude,
                )?;
                let mem = memory_attention(tape, q, &retrieved)?;
                gated_fuse(tape, local, mem, ctx.gate, h)?
            } else {
                local
            };
            per_head.push(fused);
            if ctx.mode == Mode::Train {
                emissions.push(emitted_fact(
                    tape,
                    k,
                    v,
                    ctx.sample_ids[b],
                    h as u32,
                    ctx.cache_token,
                ));
            }
        }
        outputs.push(per_head);
    }
    let id = combine_heads(tape, &outputs, params)?;
    Ok((
        TokenSequence {
            id,
            batch: x.batch,
            seq_len: x.seq_len,
        },
        emissions,
    ))
}

#[cfg(test)]
mod tests;
