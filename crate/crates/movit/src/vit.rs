//! A small vision transformer whose layers can individually be swapped
//! for the memorizing attention block.

use crate::error::{MovitError, Result};
use crate::memory::{AttentionFact, FactStore};
use crate::movit_block::{movit_block_forward, MovitBlockContext};
use crate::tensor::{Scalar, Tape, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Layer index hosting the memorizing block, if any.
    pub movit_layer: Option<usize>,
    /// Which token's key/value each head caches per sample.
    pub cache_token: CacheToken,
}

/// Source of the per-sample fact emitted by each head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CacheToken {
    /// The class token summary.
    #[default]
    Cls,
    /// Mean over all tokens.
    Mean,
}

impl std::str::FromStr for CacheToken {
    type Err = MovitError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(CacheToken::Cls),
            "mean" => Ok(CacheToken::Mean),
            other => Err(MovitError::Config(format!(
                "unknown cache token `{other}` (expected cls|mean)"
            ))),
        }
    }
}

impl Default for ViTConfig {
    /// Desk-scale default: 32-px single-channel images, patch 8,
    /// width 48, 4 layers of 3 heads, memorizing block in the last layer.
    fn default() -> Self {
        ViTConfig {
            image_size: 32,
            patch_size: 8,
            in_channels: 1,
            embed_dim: 48,
            depth: 4,
            num_heads: 3,
            mlp_ratio: 4,
            num_classes: 4,
            movit_layer: Some(3),
            cache_token: CacheToken::Cls,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(MovitError::Config(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(MovitError::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.num_classes == 0 || self.in_channels == 0
        {
            return Err(MovitError::Config(
                "depth, mlp_ratio, num_classes, and in_channels must be positive".into(),
            ));
        }
        if let Some(l) = self.movit_layer {
            if l >= self.depth {
                return Err(MovitError::Config(format!(
                    "movit_layer {l} out of range for depth {}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Tokens per image, including the class token at position 0.
    pub fn seq_len(&self) -> usize {
        1 + self.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }
}

/// One named parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All trainable parameters, addressable by stable index and by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> usize {
        let name = name.into();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        debug_assert!(!self.by_name.contains_key(&name), "duplicate param {name}");
        let idx = self.params.len();
        self.by_name.insert(name.clone(), idx);
        self.params.push(Param { name, shape, data });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    patch_w: usize,
    patch_b: usize,
    cls: usize,
    pos: usize,
    layers: Vec<LayerIdx>,
    final_ln_g: usize,
    final_ln_b: usize,
    head_w: usize,
    head_b: usize,
    gate_bias: Option<usize>,
}

/// Model parameters plus the layout that maps them onto the forward pass.
#[derive(Debug, Clone)]
pub struct VitModel<T> {
    pub cfg: ViTConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> VitModel<T> {
    /// Fresh model with seeded normal(0, 0.02) weight initialization.
    pub fn init(cfg: ViTConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid distribution");
        let mut params = ParamSet::new();
        let randn = |n: usize, rng: &mut ChaCha8Rng| -> Vec<T> {
            (0..n).map(|_| T::from_f64(normal.sample(rng))).collect()
        };
        let zeros = |n: usize| vec![T::zero(); n];
        let ones = |n: usize| vec![T::one(); n];

        let e = cfg.embed_dim;
        let pd = cfg.patch_dim();
        let s = cfg.seq_len();
        let hidden = e * cfg.mlp_ratio;

        let patch_w = params.add("patch.weight", vec![pd, e], randn(pd * e, &mut rng));
        let patch_b = params.add("patch.bias", vec![e], zeros(e));
        let cls = params.add("cls_token", vec![1, e], zeros(e));
        let pos = params.add("pos_embed", vec![s, e], randn(s * e, &mut rng));
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let p = |suffix: &str| format!("layers.{l}.{suffix}");
            layers.push(LayerIdx {
                ln1_g: params.add(p("ln1.gamma"), vec![e], ones(e)),
                ln1_b: params.add(p("ln1.beta"), vec![e], zeros(e)),
                wq: params.add(p("attn.wq"), vec![e, e], randn(e * e, &mut rng)),
                bq: params.add(p("attn.bq"), vec![e], zeros(e)),
                wk: params.add(p("attn.wk"), vec![e, e], randn(e * e, &mut rng)),
                bk: params.add(p("attn.bk"), vec![e], zeros(e)),
                wv: params.add(p("attn.wv"), vec![e, e], randn(e * e, &mut rng)),
                bv: params.add(p("attn.bv"), vec![e], zeros(e)),
                wo: params.add(p("attn.wo"), vec![e, e], randn(e * e, &mut rng)),
                bo: params.add(p("attn.bo"), vec![e], zeros(e)),
                ln2_g: params.add(p("ln2.gamma"), vec![e], ones(e)),
                ln2_b: params.add(p("ln2.beta"), vec![e], zeros(e)),
                mlp_w1: params.add(p("mlp.w1"), vec![e, hidden], randn(e * hidden, &mut rng)),
                mlp_b1: params.add(p("mlp.b1"), vec![hidden], zeros(hidden)),
                mlp_w2: params.add(p("mlp.w2"), vec![hidden, e], randn(hidden * e, &mut rng)),
                mlp_b2: params.add(p("mlp.b2"), vec![e], zeros(e)),
            });
        }
        let final_ln_g = params.add("final_ln.gamma", vec![e], ones(e));
        let final_ln_b = params.add("final_ln.beta", vec![e], zeros(e));
        let head_w = params.add(
            "head.weight",
            vec![e, cfg.num_classes],
            randn(e * cfg.num_classes, &mut rng),
        );
        let head_b = params.add("head.bias", vec![cfg.num_classes], zeros(cfg.num_classes));
        let gate_bias = cfg
            .movit_layer
            .map(|_| params.add("gate.bias", vec![1, cfg.num_heads], zeros(cfg.num_heads)));

        Ok(VitModel {
            cfg,
            params,
            layout: Layout {
                patch_w,
                patch_b,
                cls,
                pos,
                layers,
                final_ln_g,
                final_ln_b,
                head_w,
                head_b,
                gate_bias,
            },
        })
    }

    /// Rebuilds a model around externally loaded parameters (checkpoint
    /// restore). Fails when a block is missing or misshapen.
    pub fn from_params(cfg: ViTConfig, params: ParamSet<T>) -> Result<Self> {
        cfg.validate()?;
        let template = VitModel::<T>::init(cfg.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(MovitError::Incompatible(format!(
                "expected {} parameter blocks, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for expected in template.params.iter() {
            match params.index_of(&expected.name) {
                Some(i) if params.get(i).shape == expected.shape => {}
                Some(i) => {
                    return Err(MovitError::Incompatible(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        expected.name,
                        params.get(i).shape,
                        expected.shape
                    )))
                }
                None => {
                    return Err(MovitError::Incompatible(format!(
                        "missing parameter block `{}`",
                        expected.name
                    )))
                }
            }
        }
        // Reindex the layout onto the provided set's ordering.
        let find = |name: &str| params.index_of(name).expect("verified above");
        let mut layout = template.layout.clone();
        layout.patch_w = find("patch.weight");
        layout.patch_b = find("patch.bias");
        layout.cls = find("cls_token");
        layout.pos = find("pos_embed");
        for (l, idx) in layout.layers.iter_mut().enumerate() {
            let p = |suffix: &str| format!("layers.{l}.{suffix}");
            *idx = LayerIdx {
                ln1_g: find(&p("ln1.gamma")),
                ln1_b: find(&p("ln1.beta")),
                wq: find(&p("attn.wq")),
                bq: find(&p("attn.bq")),
                wk: find(&p("attn.wk")),
                bk: find(&p("attn.bk")),
                wv: find(&p("attn.wv")),
                bv: find(&p("attn.bv")),
                wo: find(&p("attn.wo")),
                bo: find(&p("attn.bo")),
                ln2_g: find(&p("ln2.gamma")),
                ln2_b: find(&p("ln2.beta")),
                mlp_w1: find(&p("mlp.w1")),
                mlp_b1: find(&p("mlp.b1")),
                mlp_w2: find(&p("mlp.w2")),
                mlp_b2: find(&p("mlp.b2")),
            };
        }
        layout.final_ln_g = find("final_ln.gamma");
        layout.final_ln_b = find("final_ln.beta");
        layout.head_w = find("head.weight");
        layout.head_b = find("head.bias");
        layout.gate_bias = template
            .layout
            .gate_bias
            .map(|_| find("gate.bias"));
        Ok(VitModel {
            cfg: template.cfg,
            params,
            layout,
        })
    }

    /// Loads every parameter block onto a tape as gradient-tracked leaves.
    pub fn bind<'m>(&'m self, tape: &mut Tape<T>) -> Result<BoundModel<'m, T>> {
        let mut ids = Vec::with_capacity(self.params.len());
        for p in self.params.iter() {
            ids.push(tape.leaf(p.data.clone(), p.shape.clone())?);
        }
        Ok(BoundModel { model: self, ids })
    }
}

/// Per-pass binding of a model's parameters to tape tensors.
pub struct BoundModel<'m, T> {
    pub model: &'m VitModel<T>,
    pub ids: Vec<TensorId>,
}

/// Bound attention weights of one layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
}

impl<'m, T: Scalar> BoundModel<'m, T> {
    fn id(&self, idx: usize) -> TensorId {
        self.ids[idx]
    }

    pub fn attention_params(&self, layer: usize) -> AttentionParams {
        let l = &self.model.layout.layers[layer];
        AttentionParams {
            wq: self.id(l.wq),
            bq: self.id(l.bq),
            wk: self.id(l.wk),
            bk: self.id(l.bk),
            wv: self.id(l.wv),
            bv: self.id(l.bv),
            wo: self.id(l.wo),
            bo: self.id(l.bo),
        }
    }

    pub fn gate_bias(&self) -> Option<TensorId> {
        self.model.layout.gate_bias.map(|i| self.id(i))
    }
}

/// Token matrix of a batch, flattened to `[batch·seq_len, embed_dim]`
/// with each item's class token at its row 0.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence {
    pub id: TensorId,
    pub batch: usize,
    pub seq_len: usize,
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Everything the forward pass needs besides weights and pixels.
pub struct ForwardOptions<'a, T> {
    pub mode: Mode,
    /// Memory to retrieve from at the movit layer (bank or prototypes).
    pub store: Option<&'a dyn FactStore<T>>,
    pub knn_k: usize,
    /// Per-item sample ids; required in train mode for fact emission and
    /// self-retrieval exclusion.
    pub sample_ids: &'a [u64],
}

impl<'a, T> ForwardOptions<'a, T> {
    pub fn infer(store: Option<&'a dyn FactStore<T>>, knn_k: usize) -> Self {
        ForwardOptions {
            mode: Mode::Infer,
            store,
            knn_k,
            sample_ids: &[],
        }
    }
}

/// Splits images into non-overlapping patches, projects them, prepends
/// the class token, and adds the learned positional embedding.
pub fn patchify<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundModel<'_, T>,
    images: &[T],
    batch: usize,
) -> Result<TokenSequence> {
    let cfg = &bound.model.cfg;
    let (c, hw, ps) = (cfg.in_channels, cfg.image_size, cfg.patch_size);
    let expected = batch * c * hw * hw;
    if images.len() != expected {
        return Err(MovitError::ShapeMismatch {
            op: "patchify",
            lhs: vec![images.len()],
            rhs: vec![batch, c, hw, hw],
        });
    }
    let grid = hw / ps;
    let num_patches = cfg.num_patches();
    let pd = cfg.patch_dim();
    let mut patches = vec![T::zero(); batch * num_patches * pd];
    for b in 0..batch {
        for gy in 0..grid {
            for gx in 0..grid {
                let p = gy * grid + gx;
                let dst_base = (b * num_patches + p) * pd;
                for ch in 0..c {
                    for dy in 0..ps {
                        let src = ((b * c + ch) * hw + gy * ps + dy) * hw + gx * ps;
                        let dst = dst_base + (ch * ps + dy) * ps;
                        patches[dst..dst + ps].copy_from_slice(&images[src..src + ps]);
                    }
                }
            }
        }
    }
    let patch_mat = tape.constant(patches, vec![batch * num_patches, pd])?;
    let projected = tape.matmul(patch_mat, bound.id(bound.model.layout.patch_w))?;
    let projected = tape.add_bias(projected, bound.id(bound.model.layout.patch_b))?;

    let cls = bound.id(bound.model.layout.cls);
    let pos = bound.id(bound.model.layout.pos);
    let mut items = Vec::with_capacity(batch);
    for b in 0..batch {
        let rows = tape.slice_rows(projected, b * num_patches, num_patches)?;
        let with_cls = tape.concat_rows(&[cls, rows])?;
        items.push(tape.add(with_cls, pos)?);
    }
    let id = tape.concat_rows(&items)?;
    Ok(TokenSequence {
        id,
        batch,
        seq_len: cfg.seq_len(),
    })
}

/// Per-head query/key/value tensors of one layer, indexed `[b][h]`,
/// each of shape `[seq_len, head_dim]`.
pub struct HeadTensors {
    pub q: Vec<Vec<TensorId>>,
    pub k: Vec<Vec<TensorId>>,
    pub v: Vec<Vec<TensorId>>,
}

pub(crate) fn qkv_heads<T: Scalar>(
    tape: &mut Tape<T>,
    x: &TokenSequence,
    params: &AttentionParams,
    num_heads: usize,
) -> Result<HeadTensors> {
    let s = x.seq_len;
    let e = tape.shape(x.id)[1];
    let d = e / num_heads;
    let q_all = tape.matmul(x.id, params.wq)?;
    let q_all = tape.add_bias(q_all, params.bq)?;
    let k_all = tape.matmul(x.id, params.wk)?;
    let k_all = tape.add_bias(k_all, params.bk)?;
    let v_all = tape.matmul(x.id, params.wv)?;
    let v_all = tape.add_bias(v_all, params.bv)?;
    let mut heads = HeadTensors {
        q: Vec::with_capacity(x.batch),
        k: Vec::with_capacity(x.batch),
        v: Vec::with_capacity(x.batch),
    };
    for b in 0..x.batch {
        let (mut qb, mut kb, mut vb) = (Vec::new(), Vec::new(), Vec::new());
        let q_rows = tape.slice_rows(q_all, b * s, s)?;
        let k_rows = tape.slice_rows(k_all, b * s, s)?;
        let v_rows = tape.slice_rows(v_all, b * s, s)?;
        for h in 0..num_heads {
            qb.push(tape.slice_cols(q_rows, h * d, d)?);
            kb.push(tape.slice_cols(k_rows, h * d, d)?);
            vb.push(tape.slice_cols(v_rows, h * d, d)?);
        }
        heads.q.push(qb);
        heads.k.push(kb);
        heads.v.push(vb);
    }
    Ok(heads)
}

/// Scaled dot-product attention of one head: `softmax(q·kᵀ/√d)·v`.
pub(crate) fn local_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: TensorId,
    k: TensorId,
    v: TensorId,
) -> Result<TensorId> {
    let d = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.affine(scores, 1.0 / (d as f64).sqrt(), 0.0)?;
    let attn = tape.softmax(scaled)?;
    tape.matmul(attn, v)
}

/// Joins per-head outputs (`[b][h]` of `[s, d]`) back into a
/// `[batch·s, e]` matrix and applies the output projection.
pub(crate) fn combine_heads<T: Scalar>(
    tape: &mut Tape<T>,
    per_head: &[Vec<TensorId>],
    params: &AttentionParams,
) -> Result<TensorId> {
    let mut items = Vec::with_capacity(per_head.len());
    for heads in per_head {
        items.push(tape.concat_cols(heads)?);
    }
    let joined = tape.concat_rows(&items)?;
    let out = tape.matmul(joined, params.wo)?;
    tape.add_bias(out, params.bo)
}

/// Vanilla multi-head self-attention. Returns the block output and the
/// per-head q/k/v tensors for caching and retrieval.
pub fn mhsa_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: &TokenSequence,
    params: &AttentionParams,
    num_heads: usize,
) -> Result<(TokenSequence, HeadTensors)> {
    let heads = qkv_heads(tape, x, params, num_heads)?;
    let mut outputs = Vec::with_capacity(x.batch);
    for b in 0..x.batch {
        let mut per_head = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            per_head.push(local_head_attention(
                tape,
                heads.q[b][h],
                heads.k[b][h],
                heads.v[b][h],
            )?);
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
        heads,
    ))
}

fn mlp_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorId,
    bound: &BoundModel<'_, T>,
    layer: usize,
) -> Result<TensorId> {
    let l = &bound.model.layout.layers[layer];
    let h = tape.matmul(x, bound.id(l.mlp_w1))?;
    let h = tape.add_bias(h, bound.id(l.mlp_b1))?;
    let h = tape.gelu(h)?;
    let out = tape.matmul(h, bound.id(l.mlp_w2))?;
    tape.add_bias(out, bound.id(l.mlp_b2))
}

/// Full forward pass: logits for a batch plus any attention facts
/// emitted by the memorizing layer (train mode only).
pub fn vit_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundModel<'_, T>,
    images: &[T],
    batch: usize,
    opts: &ForwardOptions<'_, T>,
) -> Result<(TensorId, Vec<AttentionFact<T>>)> {
    let cfg = &bound.model.cfg;
    if opts.mode == Mode::Train && cfg.movit_layer.is_some() && opts.sample_ids.len() != batch {
        return Err(MovitError::Contract(format!(
            "train mode needs one sample id per batch item ({} != {batch})",
            opts.sample_ids.len()
        )));
    }
    if opts.mode == Mode::Infer && cfg.movit_layer.is_some() {
        match opts.store {
            None => {
                return Err(MovitError::Config(
                    "inference with a movit layer requires a memory bank or prototype bank".into(),
                ))
            }
            Some(s) if s.is_empty() => {
                return Err(MovitError::Config(
                    "inference with a movit layer requires a nonempty bank".into(),
                ))
            }
            Some(s) if s.head_dim() != cfg.head_dim() => {
                return Err(MovitError::Incompatible(format!(
                    "bank head_dim {} does not match model head_dim {}",
                    s.head_dim(),
                    cfg.head_dim()
                )))
            }
            _ => {}
        }
    }

    let mut x = patchify(tape, bound, images, batch)?;
    let mut emissions = Vec::new();
    for layer in 0..cfg.depth {
        let l = &bound.model.layout.layers[layer];
        let normed = tape.layer_norm(x.id, bound.id(l.ln1_g), bound.id(l.ln1_b), LAYER_NORM_EPS)?;
        let normed_seq = TokenSequence {
            id: normed,
            batch: x.batch,
            seq_len: x.seq_len,
        };
        let attn_params = bound.attention_params(layer);
        let attn_out = if cfg.movit_layer == Some(layer) {
            let ctx = MovitBlockContext {
                store: opts.store,
                gate: bound.gate_bias().expect("gate exists with a movit layer"),
                mode: opts.mode,
                knn_k: opts.knn_k,
                sample_ids: opts.sample_ids,
                cache_token: cfg.cache_token,
            };
            let (out, facts) =
                movit_block_forward(tape, &normed_seq, &attn_params, cfg.num_heads, &ctx)?;
            emissions.extend(facts);
            out
        } else {
            mhsa_forward(tape, &normed_seq, &attn_params, cfg.num_heads)?.0
        };
        let with_attn = tape.add(x.id, attn_out.id)?;
        let normed2 =
            tape.layer_norm(with_attn, bound.id(l.ln2_g), bound.id(l.ln2_b), LAYER_NORM_EPS)?;
        let mlp_out = mlp_forward(tape, normed2, bound, layer)?;
        let id = tape.add(with_attn, mlp_out)?;
        x = TokenSequence {
            id,
            batch: x.batch,
            seq_len: x.seq_len,
        };
    }

    let normed = tape.layer_norm(
        x.id,
        bound.id(bound.model.layout.final_ln_g),
        bound.id(bound.model.layout.final_ln_b),
        LAYER_NORM_EPS,
    )?;
    let mut cls_rows = Vec::with_capacity(batch);
    for b in 0..batch {
        cls_rows.push(tape.slice_rows(normed, b * x.seq_len, 1)?);
    }
    let cls = tape.concat_rows(&cls_rows)?;
    let logits = tape.matmul(cls, bound.id(bound.model.layout.head_w))?;
    let logits = tape.add_bias(logits, bound.id(bound.model.layout.head_b))?;
    Ok((logits, emissions))
}
