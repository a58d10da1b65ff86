//! Closed-form FLOP and byte counts for every layer of a decoder block.
//!
//! Conventions:
//! - One multiply-accumulate is two operations.
//! - Every operand is read once from main memory and every result written once,
//!   unless a kernel fusion below says otherwise.
//! - Softmax, RoPE rotation, normalization and residual adds are costed as
//!   bytes-only passes; their arithmetic is ignored.
//!
//! Fusions modeled:
//! - `fused` attention kernel (FlashAttention / FlashMLA style): score, RoPE
//!   score, softmax and context run as one kernel, so the score and probability
//!   matrices never reach main memory. With reordering the latent cache is read
//!   once for score and context.
//! - Reordered decode chains Q decompression into the absorbed `W_DK` multiply,
//!   and the latent context into the absorbed `W_DV` multiply. The per-head
//!   vectors in between stay on chip.
//!
//! Under reordering the non-reordered decode path materializes per-head K with
//! the RoPE slice broadcast to every head, so K is `d_hd + d_rope` wide.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::hw::{roofline_time, AcceleratorSpec};
use crate::model::{AttentionVariant, FfnVariant, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum Phase {
    Prefill { l_in: u64 },
    Decode { l: u64 },
}

impl Phase {
    pub fn validate(&self) -> Result<()> {
        if self.context_len() == 0 {
            return Err(SimError::InvalidArgument("sequence length must be >= 1".into()));
        }
        Ok(())
    }

    /// Tokens attended to (L).
    pub fn context_len(&self) -> u64 {
        match *self {
            Phase::Prefill { l_in } => l_in,
            Phase::Decode { l } => l,
        }
    }

    /// Query rows per request (L_in for prefill, 1 for decode).
    pub fn query_len(&self) -> u64 {
        match *self {
            Phase::Prefill { l_in } => l_in,
            Phase::Decode { .. } => 1,
        }
    }

    pub fn is_decode(&self) -> bool {
        matches!(self, Phase::Decode { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Prefill { .. } => "prefill",
            Phase::Decode { .. } => "decode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerLabel {
    Fc,
    /// (a) H -> C_Q, C_KV and the shared RoPE key.
    QkvCompress,
    /// (b) C_Q -> per-head RoPE query.
    QRope,
    /// (c) C_Q -> per-head Q.
    QDecompress,
    /// (d) K decompression, or Q x W_DK^T when reordered.
    KDecompress,
    /// (e) V decompression, or O_latent x W_DV when reordered.
    VDecompress,
    /// (f) Q K^T, or absorbed-Q x C_KV^T when reordered.
    Score,
    /// (g) RoPE part of the score.
    KRope,
    Softmax,
    /// (h) P V, or P C_KV when reordered.
    Context,
    OutProj,
    /// Q/K/V generation for MHA and GQA.
    QkvProj,
    FfnGate,
    FfnUp,
    FfnDown,
    ExpertGate,
    ExpertUp,
    ExpertDown,
    SharedGate,
    SharedUp,
    SharedDown,
    Router,
    NormResidual,
}

impl LayerLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerLabel::Fc => "fc",
            LayerLabel::QkvCompress => "qkv_compress",
            LayerLabel::QRope => "q_rope",
            LayerLabel::QDecompress => "q_decompress",
            LayerLabel::KDecompress => "k_decompress",
            LayerLabel::VDecompress => "v_decompress",
            LayerLabel::Score => "score",
            LayerLabel::KRope => "k_rope",
            LayerLabel::Softmax => "softmax",
            LayerLabel::Context => "context",
            LayerLabel::OutProj => "out_proj",
            LayerLabel::QkvProj => "qkv_proj",
            LayerLabel::FfnGate => "ffn_gate",
            LayerLabel::FfnUp => "ffn_up",
            LayerLabel::FfnDown => "ffn_down",
            LayerLabel::ExpertGate => "expert_gate",
            LayerLabel::ExpertUp => "expert_up",
            LayerLabel::ExpertDown => "expert_down",
            LayerLabel::SharedGate => "shared_gate",
            LayerLabel::SharedUp => "shared_up",
            LayerLabel::SharedDown => "shared_down",
            LayerLabel::Router => "router",
            LayerLabel::NormResidual => "norm_residual",
        }
    }

    pub fn class(&self) -> LayerClass {
        use LayerLabel::*;
        match self {
            Fc | QkvCompress | QRope | QDecompress | OutProj | QkvProj => LayerClass::AttnFc,
            KDecompress | VDecompress => LayerClass::KvDecompress,
            Score | KRope | Softmax | Context => LayerClass::CoreAttention,
            FfnGate | FfnUp | FfnDown => LayerClass::Ffn,
            ExpertGate | ExpertUp | ExpertDown => LayerClass::RoutedExpert,
            SharedGate | SharedUp | SharedDown => LayerClass::SharedExpert,
            Router => LayerClass::Router,
            NormResidual => LayerClass::Other,
        }
    }
}

impl std::fmt::Display for LayerLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse grouping used for breakdown columns. The order is the output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerClass {
    AttnFc,
    KvDecompress,
    CoreAttention,
    Ffn,
    RoutedExpert,
    SharedExpert,
    Router,
    Comm,
    Other,
}

impl LayerClass {
    pub const ALL: [LayerClass; 9] = [
        LayerClass::AttnFc,
        LayerClass::KvDecompress,
        LayerClass::CoreAttention,
        LayerClass::Ffn,
        LayerClass::RoutedExpert,
        LayerClass::SharedExpert,
        LayerClass::Router,
        LayerClass::Comm,
        LayerClass::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerClass::AttnFc => "attn_fc",
            LayerClass::KvDecompress => "kv_decompress",
            LayerClass::CoreAttention => "core_attention",
            LayerClass::Ffn => "ffn",
            LayerClass::RoutedExpert => "moe_expert",
            LayerClass::SharedExpert => "moe_shared",
            LayerClass::Router => "router",
            LayerClass::Comm => "comm",
            LayerClass::Other => "other",
        }
    }

    /// Classes that make up the attention block.
    pub fn is_attention(&self) -> bool {
        matches!(
            self,
            LayerClass::AttnFc | LayerClass::KvDecompress | LayerClass::CoreAttention
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerCost {
    pub label: LayerLabel,
    pub flops: f64,
    /// Bytes moved to or from main memory, weights included.
    pub bytes: f64,
    /// Portion of `bytes` that is weight reads.
    pub weight_bytes: f64,
    /// Member of the fused attention kernel; evaluated jointly with its peers.
    pub fused: bool,
}

impl LayerCost {
    pub fn new(label: LayerLabel, flops: f64, bytes: f64) -> Self {
        Self {
            label,
            flops,
            bytes,
            weight_bytes: 0.0,
            fused: false,
        }
    }

    pub fn labeled(mut self, label: LayerLabel) -> Self {
        self.label = label;
        self
    }

    /// Arithmetic intensity in op/byte.
    pub fn ai(&self) -> f64 {
        if self.bytes > 0.0 {
            self.flops / self.bytes
        } else if self.flops > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn time(&self, hw: &AcceleratorSpec) -> f64 {
        roofline_time(self.flops, self.bytes, hw)
    }

    /// The same layer executed `n` times back to back.
    pub fn repeated(mut self, n: f64) -> Self {
        self.flops *= n;
        self.bytes *= n;
        self.weight_bytes *= n;
        self
    }

    fn fused(mut self, fused: bool) -> Self {
        self.fused = fused;
        self
    }
}

/// FC (GEMM) layer: `b_eff` rows times an `in_dim x out_dim` weight.
pub fn fc_cost(b_eff: u64, in_dim: u64, out_dim: u64, dtype_bytes: u64) -> LayerCost {
    let (b, i, o, dt) = (b_eff as f64, in_dim as f64, out_dim as f64, dtype_bytes as f64);
    let weights = dt * i * o;
    LayerCost {
        label: LayerLabel::Fc,
        flops: 2.0 * b * i * o,
        bytes: weights + dt * (b * i + b * o),
        weight_bytes: weights,
        fused: false,
    }
}

/// `heads` independent FC layers with per-head weights (batched GEMM).
fn per_head_fc(rows: u64, in_dim: u64, out_dim: u64, heads: u64, dt: u64) -> LayerCost {
    fc_cost(rows, in_dim, out_dim, dt).repeated(heads as f64)
}

/// Per-layer costs of an MLA attention block on one device holding `b`
/// requests and `heads` heads.
pub fn mla_block_cost(
    model: &ModelSpec,
    phase: Phase,
    reorder: bool,
    fused: bool,
    b: u64,
    heads: u64,
) -> Result<Vec<LayerCost>> {
    let AttentionVariant::Mla { d_qco, d_kvco, d_rope } = model.attention else {
        return Err(SimError::VariantMismatch {
            expected: "MLA",
            found: model.attention.name(),
            model: model.name.clone(),
        });
    };
    phase.validate()?;
    check_heads(model, heads)?;
    let dt = model.dtype_bytes;
    let dtf = dt as f64;
    let (e, dh) = (model.d_emb, model.d_hd);
    let (ctx, q) = (phase.context_len(), phase.query_len());
    let rows = b * q;
    let (bf, hf, lf, qf) = (b as f64, heads as f64, ctx as f64, q as f64);
    let (dhf, kvf, rf) = (dh as f64, d_kvco as f64, d_rope as f64);
    // Score/probability matrix elements, per pass.
    let s_elems = bf * hf * qf * lf;
    let s_traffic = if fused { 0.0 } else { 1.0 };
    let chained = reorder && phase.is_decode();

    let mut out = Vec::with_capacity(11);
    out.push(fc_cost(rows, e, d_qco + d_kvco + d_rope, dt).labeled(LayerLabel::QkvCompress));
    out.push(fc_cost(rows, d_qco, heads * d_rope, dt).labeled(LayerLabel::QRope));
    let mut q_dec = fc_cost(rows, d_qco, heads * dh, dt).labeled(LayerLabel::QDecompress);
    if chained {
        q_dec.bytes -= dtf * bf * hf * dhf;
    }
    out.push(q_dec);

    if !reorder {
        // Decompress the whole latent cache for every request.
        out.push(fc_cost(b * ctx, d_kvco, heads * dh, dt).labeled(LayerLabel::KDecompress));
        out.push(fc_cost(b * ctx, d_kvco, heads * dh, dt).labeled(LayerLabel::VDecompress));
        out.push(
            LayerCost::new(
                LayerLabel::Score,
                2.0 * s_elems * dhf,
                dtf * (bf * qf * hf * dhf + bf * lf * hf * dhf + s_traffic * s_elems),
            )
            .fused(fused),
        );
        // Shared RoPE key broadcast into every head's K, then its score term
        // accumulated into S.
        out.push(
            LayerCost::new(
                LayerLabel::KRope,
                2.0 * s_elems * rf,
                dtf * (bf * lf * rf + 2.0 * bf * lf * hf * rf + bf * qf * hf * rf + s_traffic * 2.0 * s_elems),
            )
            .fused(fused),
        );
        out.push(LayerCost::new(LayerLabel::Softmax, 0.0, dtf * s_traffic * 2.0 * s_elems).fused(fused));
        out.push(
            LayerCost::new(
                LayerLabel::Context,
                2.0 * s_elems * dhf,
                dtf * (s_traffic * s_elems + bf * lf * hf * dhf + bf * qf * hf * dhf),
            )
            .fused(fused),
        );
        out.push(fc_cost(rows, heads * dh, e, dt).labeled(LayerLabel::OutProj));
    } else {
        let mut k_abs = per_head_fc(rows, dh, d_kvco, heads, dt).labeled(LayerLabel::KDecompress);
        if chained {
            k_abs.bytes -= dtf * bf * hf * dhf;
        }
        out.push(k_abs);
        out.push(
            LayerCost::new(
                LayerLabel::Score,
                2.0 * s_elems * kvf,
                dtf * (bf * qf * hf * kvf + bf * lf * kvf + s_traffic * s_elems),
            )
            .fused(fused),
        );
        out.push(
            LayerCost::new(
                LayerLabel::KRope,
                2.0 * s_elems * rf,
                dtf * (bf * lf * rf + bf * qf * hf * rf + s_traffic * 2.0 * s_elems),
            )
            .fused(fused),
        );
        out.push(LayerCost::new(LayerLabel::Softmax, 0.0, dtf * s_traffic * 2.0 * s_elems).fused(fused));
        let latent_read = if fused { 0.0 } else { bf * lf * kvf };
        let latent_write = if chained { 0.0 } else { bf * qf * hf * kvf };
        out.push(
            LayerCost::new(
                LayerLabel::Context,
                2.0 * s_elems * kvf,
                dtf * (s_traffic * s_elems + latent_read + latent_write),
            )
            .fused(fused),
        );
        let mut v_abs = per_head_fc(rows, d_kvco, dh, heads, dt).labeled(LayerLabel::VDecompress);
        if chained {
            v_abs.bytes -= dtf * bf * hf * kvf;
        }
        out.push(v_abs);
        out.push(fc_cost(rows, heads * dh, e, dt).labeled(LayerLabel::OutProj));
    }
    Ok(out)
}

/// Core attention (score, softmax, context) of MHA or GQA, unfused.
pub fn mha_core_attention_cost(model: &ModelSpec, phase: Phase, b: u64, heads: u64) -> Result<Vec<LayerCost>> {
    mha_core(model, phase, false, b, heads)
}

fn mha_core(model: &ModelSpec, phase: Phase, fused: bool, b: u64, heads: u64) -> Result<Vec<LayerCost>> {
    if let AttentionVariant::Mla { .. } = model.attention {
        return Err(SimError::VariantMismatch {
            expected: "MHA or GQA",
            found: "MLA",
            model: model.name.clone(),
        });
    }
    phase.validate()?;
    check_heads(model, heads)?;
    let dtf = model.dtype_bytes as f64;
    let kv_heads = kv_heads_on_device(model, heads) as f64;
    let (bf, hf, lf, qf, dhf) = (
        b as f64,
        heads as f64,
        phase.context_len() as f64,
        phase.query_len() as f64,
        model.d_hd as f64,
    );
    let s_elems = bf * hf * qf * lf;
    let s_traffic = if fused { 0.0 } else { 1.0 };
    Ok(vec![
        LayerCost::new(
            LayerLabel::Score,
            2.0 * s_elems * dhf,
            dtf * (bf * qf * hf * dhf + bf * lf * kv_heads * dhf + s_traffic * s_elems),
        )
        .fused(fused),
        LayerCost::new(LayerLabel::Softmax, 0.0, dtf * s_traffic * 2.0 * s_elems).fused(fused),
        LayerCost::new(
            LayerLabel::Context,
            2.0 * s_elems * dhf,
            dtf * (s_traffic * s_elems + bf * lf * kv_heads * dhf + bf * qf * hf * dhf),
        )
        .fused(fused),
    ])
}

fn kv_heads_on_device(model: &ModelSpec, heads: u64) -> u64 {
    match model.attention {
        AttentionVariant::Gqa { group_size } => heads.div_ceil(group_size),
        _ => heads,
    }
}

fn check_heads(model: &ModelSpec, heads: u64) -> Result<()> {
    if heads == 0 || heads > model.n_hd {
        return Err(SimError::InvalidArgument(format!(
            "heads per device {heads} must lie in 1..={}",
            model.n_hd
        )));
    }
    Ok(())
}

/// Whole attention block for any variant: projections, core attention, output projection.
pub fn attention_block_cost(
    model: &ModelSpec,
    phase: Phase,
    reorder: bool,
    fused: bool,
    b: u64,
    heads: u64,
) -> Result<Vec<LayerCost>> {
    match model.attention {
        AttentionVariant::Mla { .. } => mla_block_cost(model, phase, reorder, fused, b, heads),
        AttentionVariant::Mha | AttentionVariant::Gqa { .. } => {
            let dt = model.dtype_bytes;
            let rows = b * phase.query_len();
            let kv = kv_heads_on_device(model, heads);
            let mut out = vec![fc_cost(rows, model.d_emb, (heads + 2 * kv) * model.d_hd, dt).labeled(LayerLabel::QkvProj)];
            out.extend(mha_core(model, phase, fused, b, heads)?);
            out.push(fc_cost(rows, heads * model.d_hd, model.d_emb, dt).labeled(LayerLabel::OutProj));
            Ok(out)
        }
    }
}

/// FFN or MoE layers for `b` local token rows.
///
/// Dense: the FC layers at `b` rows. MoE: one routed expert at
/// `tokens_per_expert` rows, every shared expert at `b` rows, and the router.
pub fn ffn_or_moe_cost(model: &ModelSpec, b: u64, tokens_per_expert: u64) -> Vec<LayerCost> {
    match model.ffn {
        FfnVariant::Dense { d_ffn, gated } => dense_ffn_cost(model, b, d_ffn, gated, 1),
        FfnVariant::Moe { .. } => {
            let mut out = routed_expert_cost(model, tokens_per_expert);
            out.extend(shared_and_router_cost(model, b));
            out
        }
    }
}

/// Dense FFN layers with the intermediate dimension split over `tp` devices.
pub fn dense_ffn_cost(model: &ModelSpec, rows: u64, d_ffn: u64, gated: bool, tp: u64) -> Vec<LayerCost> {
    let (e, dt) = (model.d_emb, model.dtype_bytes);
    let width = d_ffn.div_ceil(tp);
    let mut out = Vec::with_capacity(3);
    if gated {
        out.push(fc_cost(rows, e, width, dt).labeled(LayerLabel::FfnGate));
    }
    out.push(fc_cost(rows, e, width, dt).labeled(LayerLabel::FfnUp));
    out.push(fc_cost(rows, width, e, dt).labeled(LayerLabel::FfnDown));
    out
}

/// One routed expert processing `tokens` rows. Empty when it receives no tokens.
pub fn routed_expert_cost(model: &ModelSpec, tokens: u64) -> Vec<LayerCost> {
    let FfnVariant::Moe { d_moe, n_e, .. } = model.ffn else {
        return Vec::new();
    };
    if n_e == 0 || tokens == 0 {
        return Vec::new();
    }
    let (e, dt) = (model.d_emb, model.dtype_bytes);
    vec![
        fc_cost(tokens, e, d_moe, dt).labeled(LayerLabel::ExpertGate),
        fc_cost(tokens, e, d_moe, dt).labeled(LayerLabel::ExpertUp),
        fc_cost(tokens, d_moe, e, dt).labeled(LayerLabel::ExpertDown),
    ]
}

/// Shared experts (each at `rows` rows) and the router.
pub fn shared_and_router_cost(model: &ModelSpec, rows: u64) -> Vec<LayerCost> {
    let FfnVariant::Moe { d_moe, n_shared, n_e, n_k, .. } = model.ffn else {
        return Vec::new();
    };
    let (e, dt) = (model.d_emb, model.dtype_bytes);
    let mut out = Vec::with_capacity(4);
    if n_shared > 0 && rows > 0 {
        let n = n_shared as f64;
        out.push(fc_cost(rows, e, d_moe, dt).labeled(LayerLabel::SharedGate).repeated(n));
        out.push(fc_cost(rows, e, d_moe, dt).labeled(LayerLabel::SharedUp).repeated(n));
        out.push(fc_cost(rows, d_moe, e, dt).labeled(LayerLabel::SharedDown).repeated(n));
    }
    if n_k < n_e && rows > 0 {
        out.push(fc_cost(rows, e, n_e, dt).labeled(LayerLabel::Router));
    }
    out
}

/// RMSNorm before attention and FFN plus the two residual adds.
pub fn norm_residual_cost(model: &ModelSpec, rows: u64) -> LayerCost {
    // Two norms (read + write) and two residual adds (two reads + write).
    let passes = 2.0 * 2.0 + 2.0 * 3.0;
    LayerCost::new(
        LayerLabel::NormResidual,
        0.0,
        passes * rows as f64 * model.d_emb as f64 * model.dtype_bytes as f64,
    )
}

/// Roofline time of a layer list. Members of the fused attention kernel are
/// evaluated as one roofline over their summed FLOPs and bytes.
pub fn layers_time(layers: &[LayerCost], hw: &AcceleratorSpec) -> f64 {
    layer_times(layers, hw).iter().sum()
}

/// Per-layer roofline time. A fused kernel's time is apportioned to its members
/// in proportion to their standalone roofline times.
pub fn layer_times(layers: &[LayerCost], hw: &AcceleratorSpec) -> Vec<f64> {
    let mut times: Vec<f64> = layers.iter().map(|l| l.time(hw)).collect();
    let (flops, bytes, standalone) = layers
        .iter()
        .zip(&times)
        .filter(|(l, _)| l.fused)
        .fold((0.0, 0.0, 0.0), |acc, (l, t)| (acc.0 + l.flops, acc.1 + l.bytes, acc.2 + t));
    if standalone > 0.0 {
        let joint = roofline_time(flops, bytes, hw);
        for (l, t) in layers.iter().zip(times.iter_mut()) {
            if l.fused {
                *t *= joint / standalone;
            }
        }
    }
    times
}

/// Combined cost of the fused kernel members (zero when nothing is fused).
pub fn fused_group(layers: &[LayerCost]) -> LayerCost {
    layers
        .iter()
        .filter(|l| l.fused)
        .fold(LayerCost::new(LayerLabel::Score, 0.0, 0.0), |acc, l| {
            LayerCost::new(acc.label, acc.flops + l.flops, acc.bytes + l.bytes)
        })
}

pub fn find(layers: &[LayerCost], label: LayerLabel) -> Option<&LayerCost> {
    layers.iter().find(|l| l.label == label)
}
