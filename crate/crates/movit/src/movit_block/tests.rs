use super::*;
use crate::memory::MemoryBank;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bank_from_keys(keys: &[Vec<f64>]) -> MemoryBank<f64> {
    let dim = keys[0].len();
    let mut bank = MemoryBank::new(dim, 1);
    for (i, k) in keys.iter().enumerate() {
        bank.cache_or_update(
            AttentionFact {
                sample_id: i as u64,
                head: 0,
                key: k.clone(),
                value: k.iter().map(|v| v * 10.0).collect(),
            },
            1.0,
            1.0,
        )
        .unwrap();
    }
    bank
}

fn e(i: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

#[test]
fn lookup_breaks_ties_toward_lower_index() {
    let bank = bank_from_keys(&[e(0, 3), e(1, 3), e(2, 3)]);
    let res = knn_lookup(&e(0, 3), 1, &bank, 2, KnnMode::Exact, None).unwrap();
    let hits = &res.per_query[0];
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0].bank_index, 0);
    assert_eq!(hits[0].score, 1.0);
    // e2 and e3 both score 0; the tie goes to index 1.
    assert_eq!(hits[1].bank_index, 1);
    assert_eq!(hits[1].score, 0.0);
}

#[test]
fn oversized_k_returns_whole_bank_sorted() {
    let bank = bank_from_keys(&[e(2, 3), e(0, 3), e(1, 3)]);
    let res = knn_lookup(&e(0, 3), 1, &bank, 10, KnnMode::Exact, None).unwrap();
    let hits = &res.per_query[0];
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0].bank_index, 1); // the matching key
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn approx_equals_exact_on_random_banks() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dim = 8;
    let keys: Vec<Vec<f64>> = (0..256)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let bank = bank_from_keys(&keys);
    let queries: Vec<f64> = (0..16 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    for k in [1, 4, 32] {
        let exact = knn_lookup(&queries, 16, &bank, k, KnnMode::Exact, None).unwrap();
        let approx = knn_lookup(&queries, 16, &bank, k, KnnMode::Approx, None).unwrap();
        assert_eq!(exact, approx);
    }
}

#[test]
fn exclusion_drops_matching_sample() {
    let bank = bank_from_keys(&[e(0, 2), e(0, 2)]);
    let res = knn_lookup(&e(0, 2), 1, &bank, 2, KnnMode::Exact, Some(0)).unwrap();
    assert_eq!(res.per_query[0].len(), 1);
    assert_eq!(res.per_query[0][0].bank_index, 1);

    let one_fact = bank_from_keys(&[e(0, 2)]);
    let res = knn_lookup(&e(0, 2), 1, &one_fact, 2, KnnMode::Exact, Some(0));
    assert!(matches!(res, Err(MovitError::Retrieval(_))));
}

#[test]
fn empty_bank_is_retrieval_error() {
    let bank = MemoryBank::<f64>::new(2, 1);
    let res = knn_lookup(&e(0, 2), 1, &bank, 1, KnnMode::Exact, None);
    assert!(matches!(res, Err(MovitError::Retrieval(_))));
}

#[test]
fn stored_key_retrieves_itself_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dim = 5;
    let keys: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let bank = bank_from_keys(&keys);
    for probe in [0, 7, 39] {
        let res = knn_lookup(&keys[probe], 1, &bank, 3, KnnMode::Exact, None).unwrap();
        assert_eq!(res.per_query[0][0].bank_index, probe);
    }
}

#[test]
fn memory_attention_two_identical_keys_average_values() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(vec![0.4, -0.2], vec![1, 2]).unwrap();
    let retrieved = RetrievalResult {
        per_query: vec![vec![
            Retrieved {
                bank_index: 0,
                score: 0.0,
                key: vec![1.0, 1.0],
                value: vec![2.0, 0.0],
            },
            Retrieved {
                bank_index: 1,
                score: 0.0,
                key: vec![1.0, 1.0],
                value: vec![0.0, 4.0],
            },
        ]],
        head_dim: 2,
    };
    let out = memory_attention(&mut tape, q, &retrieved).unwrap();
    assert!((tape.data(out)[0] - 1.0).abs() < 1e-12);
    assert!((tape.data(out)[1] - 2.0).abs() < 1e-12);
}

#[test]
fn memory_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (t, kk, d) = (2, 3, 4);
    let q: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let keys: Vec<f64> = (0..t * kk * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..t * kk * d).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Loop oracle.
    let mut expected = vec![0.0; t * d];
    for qi in 0..t {
        let mut logits = vec![0.0; kk];
        for j in 0..kk {
            for c in 0..d {
                logits[j] += q[qi * d + c] * keys[(qi * kk + j) * d + c];
            }
            logits[j] /= (d as f64).sqrt();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= sum);
        for (j, wj) in w.iter().enumerate() {
            for c in 0..d {
                expected[qi * d + c] += wj * values[(qi * kk + j) * d + c];
            }
        }
    }

    let mut tape = Tape::<f64>::new();
    let qt = tape.constant(q, vec![t, d]).unwrap();
    let out = tape.memory_attention(qt, keys, values, kk).unwrap();
    for (g, w) in tape.data(out).iter().zip(&expected) {
        assert!((g - w).abs() < 1e-5);
    }
}

fn fuse_with_bias(bias: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::<f64>::new();
    let local = tape.constant(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
    let memory = tape.constant(vec![-1.0, 0.0, 5.0, 2.0], vec![2, 2]).unwrap();
    let gate = tape.leaf(vec![bias], vec![1, 1]).unwrap();
    let out = gated_fuse(&mut tape, local, memory, gate, 0).unwrap();
    (
        tape.data(local).to_vec(),
        tape.data(memory).to_vec(),
        tape.data(out).to_vec(),
    )
}

#[test]
fn gate_zero_bias_is_elementwise_mean() {
    let (local, memory, out) = fuse_with_bias(0.0);
    for i in 0..4 {
        assert!((out[i] - 0.5 * (local[i] + memory[i])).abs() < 1e-12);
    }
}

#[test]
fn gate_saturation_selects_branch() {
    let (local, _, out) = fuse_with_bias(-20.0);
    for i in 0..4 {
        assert!((out[i] - local[i]).abs() < 1e-7);
    }
    let (_, memory, out) = fuse_with_bias(20.0);
    for i in 0..4 {
        assert!((out[i] - memory[i]).abs() < 1e-7);
    }
}

#[test]
fn gate_bias_receives_gradient() {
    let mut tape = Tape::<f64>::new();
    let local = tape.constant(vec![1.0, 2.0], vec![1, 2]).unwrap();
    let memory = tape.constant(vec![3.0, 5.0], vec![1, 2]).unwrap();
    let gate = tape.leaf(vec![0.3], vec![1, 1]).unwrap();
    let out = gated_fuse(&mut tape, local, memory, gate, 0).unwrap();
    let loss = tape.sum_all(out).unwrap();
    tape.backward(loss).unwrap();
    // d/db [ g(b)·m + (1−g)·l ] summed = g'(b)·Σ(m−l)
    let g = 1.0 / (1.0 + (-0.3f64).exp());
    let expected = g * (1.0 - g) * ((3.0 - 1.0) + (5.0 - 2.0));
    let got = tape.grad(gate).unwrap()[0];
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

fn block_setup(
    tape: &mut Tape<f64>,
    seed: u64,
    e: usize,
    s: usize,
) -> (TokenSequence, AttentionParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..s * e).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xt = tape.leaf(x, vec![s, e]).unwrap();
    let seq = TokenSequence {
        id: xt,
        batch: 1,
        seq_len: s,
    };
    let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng, tape: &mut Tape<f64>| {
        let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect();
        tape.leaf(data, vec![r, c]).unwrap()
    };
    let vecp = |n: usize, rng: &mut ChaCha8Rng, tape: &mut Tape<f64>| {
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
        tape.leaf(data, vec![n]).unwrap()
    };
    let params = AttentionParams {
        wq: mat(e, e, &mut rng, tape),
        bq: vecp(e, &mut rng, tape),
        wk: mat(e, e, &mut rng, tape),
        bk: vecp(e, &mut rng, tape),
        wv: mat(e, e, &mut rng, tape),
        bv: vecp(e, &mut rng, tape),
        wo: mat(e, e, &mut rng, tape),
        bo: vecp(e, &mut rng, tape),
    };
    (seq, params)
}

fn random_bank(dim: usize, m: u64, seed: u64) -> MemoryBank<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = MemoryBank::new(dim, 2);
    for i in 0..m {
        for h in 0..2 {
            bank.cache_or_update(
                AttentionFact {
                    sample_id: i,
                    head: h,
                    key: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    value: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                },
                1.0,
                1.0,
            )
            .unwrap();
        }
    }
    bank
}

#[test]
fn empty_bank_train_mode_degrades_to_vanilla() {
    let mut tape = Tape::<f64>::new();
    let (seq, params) = block_setup(&mut tape, 21, 6, 4);
    let gate = tape.leaf(vec![0.0, 0.0], vec![1, 2]).unwrap();
    let empty = MemoryBank::<f64>::new(3, 2);
    let ctx = MovitBlockContext {
        store: Some(&empty),
        gate,
        mode: Mode::Train,
        knn_k: 4,
        sample_ids: &[0],
        cache_token: CacheToken::Cls,
    };
    let (out, facts) = movit_block_forward(&mut tape, &seq, &params, 2, &ctx).unwrap();
    assert_eq!(facts.len(), 2);
    let (vanilla, _) = crate::vit::mhsa_forward(&mut tape, &seq, &params, 2).unwrap();
    assert_eq!(tape.data(out.id), tape.data(vanilla.id));
}

#[test]
fn gate_off_matches_vanilla_with_any_bank() {
    let mut tape = Tape::<f64>::new();
    let (seq, params) = block_setup(&mut tape, 22, 6, 4);
    let gate = tape.leaf(vec![-20.0, -20.0], vec![1, 2]).unwrap();
    let bank = random_bank(3, 10, 1);
    let ctx = MovitBlockContext {
        store: Some(&bank),
        gate,
        mode: Mode::Infer,
        knn_k: 4,
        sample_ids: &[],
        cache_token: CacheToken::Cls,
    };
    let (out, _) = movit_block_forward(&mut tape, &seq, &params, 2, &ctx).unwrap();
    let (vanilla, _) = crate::vit::mhsa_forward(&mut tape, &seq, &params, 2).unwrap();
    for (a, b) in tape.data(out.id).iter().zip(tape.data(vanilla.id)) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn train_mode_counts_and_ids() {
    let mut tape = Tape::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (e, s, batch) = (6, 3, 2);
    let x: Vec<f64> = (0..batch * s * e).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xt = tape.leaf(x, vec![batch * s, e]).unwrap();
    let seq = TokenSequence {
        id: xt,
        batch,
        seq_len: s,
    };
    let mat = |r: usize, c: usize, tape: &mut Tape<f64>, rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect();
        tape.leaf(data, vec![r, c]).unwrap()
    };
    let zeros6 = |tape: &mut Tape<f64>| tape.constant(vec![0.0; 6], vec![6]).unwrap();
    let params = AttentionParams {
        wq: mat(e, e, &mut tape, &mut rng),
        bq: zeros6(&mut tape),
        wk: mat(e, e, &mut tape, &mut rng),
        bk: zeros6(&mut tape),
        wv: mat(e, e, &mut tape, &mut rng),
        bv: zeros6(&mut tape),
        wo: mat(e, e, &mut tape, &mut rng),
        bo: zeros6(&mut tape),
    };
    let gate = tape.leaf(vec![0.0; 3], vec![1, 3]).unwrap();
    let bank = MemoryBank::<f64>::new(2, 3);
    let ctx = MovitBlockContext {
        store: Some(&bank),
        gate,
        mode: Mode::Train,
        knn_k: 2,
        sample_ids: &[7, 8],
        cache_token: CacheToken::Cls,
    };
    let (_, facts) = movit_block_forward(&mut tape, &seq, &params, 3, &ctx).unwrap();
    assert_eq!(facts.len(), 6);
    let ids: Vec<(u64, u32)> = facts.iter().map(|f| (f.sample_id, f.head)).collect();
    assert_eq!(ids, vec![(7, 0), (7, 1), (7, 2), (8, 0), (8, 1), (8, 2)]);
    // cls-token caching: the key is row 0 of the per-head key block
    assert_eq!(facts[0].key.len(), 2);
}

#[test]
fn gate_on_ignores_local_value_perturbation() {
    let run = |bv_shift: f64| -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let (seq, params) = block_setup(&mut tape, 25, 6, 4);
        let shifted = {
            let data: Vec<f64> = tape.data(params.bv).iter().map(|v| v + bv_shift).collect();
            tape.leaf(data, vec![6]).unwrap()
        };
        let params = AttentionParams {
            bv: shifted,
            ..params
        };
        let gate = tape.leaf(vec![20.0, 20.0], vec![1, 2]).unwrap();
        let bank = random_bank(3, 10, 2);
        let ctx = MovitBlockContext {
            store: Some(&bank),
            gate,
            mode: Mode::Infer,
            knn_k: 4,
            sample_ids: &[],
            cache_token: CacheToken::Cls,
        };
        let (out, _) = movit_block_forward(&mut tape, &seq, &params, 2, &ctx).unwrap();
        tape.data(out.id).to_vec()
    };
    let base = run(0.0);
    let perturbed = run(0.7);
    for (a, b) in base.iter().zip(&perturbed) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}
