//! Per-stage latency, throughput, memory footprint and layer breakdowns.
//!
//! Layers within a block run back to back; blocks add over `n_dec`. Every layer
//! is a roofline on the busiest device, and its byte count already includes the
//! weight reads, so the weight-load floor is part of the layer sum.

use serde::{Deserialize, Serialize};

use crate::comm::{moe_dispatch_combine, tp_allreduce, CommCost};
use crate::error::{Result, SimError};
use crate::layer_cost::{
    attention_block_cost, dense_ffn_cost, layer_times, norm_residual_cost, routed_expert_cost,
    shared_and_router_cost, LayerClass, LayerCost, LayerLabel, Phase,
};
use crate::model::{AttentionVariant, FfnVariant, ModelSpec};
use crate::parallelism::{
    experts_per_device, heads_per_device, kv_replication, tokens_per_expert, validate_plan, DeploymentPlan,
};

/// Live activation bytes per request for one decoder block (M_act).
///
/// Activations are reused block to block, so this does not scale with `n_dec`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationModel {
    /// Input plus output of the widest FC layer, plus the score and
    /// probability matrices when attention is unfused, plus the decompressed
    /// K and V when MLA runs without reordering.
    #[default]
    WidestLayer,
    /// A fixed byte count per request, independent of L.
    PerRequest { bytes: f64 },
    None,
}

impl ActivationModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationModel::PerRequest { bytes } if !(bytes >= 0.0 && bytes.is_finite()) => Err(
                SimError::InvalidArgument("activation bytes must be >= 0".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// M_act(L): activation bytes per request, summed over all devices.
pub fn activation_bytes_per_request(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase) -> f64 {
    match plan.activation {
        ActivationModel::None => 0.0,
        ActivationModel::PerRequest { bytes } => bytes,
        ActivationModel::WidestLayer => {
            let dt = model.dtype_bytes as f64;
            let (ctx, q) = (phase.context_len() as f64, phase.query_len() as f64);
            let h = model.n_hd as f64;
            let mut bytes = q * (model.d_emb + model.widest_fc_row()) as f64 * dt;
            if !plan.fused {
                bytes += 2.0 * h * q * ctx * dt;
            }
            bytes += decompressed_kv_per_request(model, plan, phase);
            bytes
        }
    }
}

/// Materialized K and V of one block per request (non-reordered MLA only).
fn decompressed_kv_per_request(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase) -> f64 {
    let (k, v) = decompressed_kv_split(model, plan, phase);
    k + v
}

fn decompressed_kv_split(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase) -> (f64, f64) {
    match model.attention {
        AttentionVariant::Mla { d_rope, .. } if !plan.reorder => {
            let base = phase.context_len() as f64 * model.n_hd as f64 * model.dtype_bytes as f64;
            (base * (model.d_hd + d_rope) as f64, base * model.d_hd as f64)
        }
        _ => (0.0, 0.0),
    }
}

/// Weight bytes stored across the whole system under `plan`.
pub fn system_weight_bytes(model: &ModelSpec, plan: &DeploymentPlan) -> f64 {
    let dt = model.dtype_bytes as f64;
    let (tp, dp, n_acc) = (plan.deg_tp as f64, plan.deg_dp as f64, plan.n_acc() as f64);
    let (replicated, partitioned) = model.attn_weight_elems_split();
    let attn = dp * (replicated as f64 * tp + partitioned as f64) * dt;
    let mut total = model.n_dec as f64 * attn;
    total += model.n_dense_blocks() as f64 * model.dense_ffn_weight_bytes() as f64 * dp;
    if let FfnVariant::Moe { n_e, n_shared, .. } = model.ffn {
        let expert = model.expert_weight_bytes() as f64;
        let per_device = n_shared as f64 * expert + model.router_weight_elems() as f64 * dt;
        total += model.n_moe_blocks() as f64 * (n_e as f64 * expert + per_device * n_acc);
    }
    total
}

/// Per-device memory footprint in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryReport {
    pub weights: f64,
    pub kv_cache: f64,
    pub activations: f64,
    /// Part of `activations` holding materialized K (non-reordered MLA).
    pub decompressed_k: f64,
    /// Part of `activations` holding materialized V (non-reordered MLA).
    pub decompressed_v: f64,
    pub total: f64,
    pub capacity: f64,
}

impl MemoryReport {
    pub fn fits(&self) -> bool {
        self.total <= self.capacity
    }
}

fn memory_for_phase(model: &ModelSpec, plan: &DeploymentPlan, b: u64, phase: Phase) -> MemoryReport {
    let n_acc = plan.n_acc() as f64;
    let bf = b as f64;
    let weights = system_weight_bytes(model, plan) / n_acc;
    let kv_cache = bf
        * phase.context_len() as f64
        * model.kv_bytes_per_token() as f64
        * kv_replication(plan, model)
        / n_acc;
    let activations = bf * activation_bytes_per_request(model, plan, phase) / n_acc;
    let (k, v) = decompressed_kv_split(model, plan, phase);
    MemoryReport {
        weights,
        kv_cache,
        activations,
        decompressed_k: bf * k / n_acc,
        decompressed_v: bf * v / n_acc,
        total: weights + kv_cache + activations,
        capacity: plan.system.accelerator.mem_cap,
    }
}

/// Per-device bytes needed to decode `b` requests at context `l`.
pub fn memory_required(model: &ModelSpec, plan: &DeploymentPlan, b: u64, l: u64) -> MemoryReport {
    memory_for_phase(model, plan, b, Phase::Decode { l })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Infeasibility {
    Capacity,
    Plan,
}

impl Infeasibility {
    pub fn as_str(&self) -> &'static str {
        match self {
            Infeasibility::Capacity => "capacity",
            Infeasibility::Plan => "plan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownEntry {
    pub label: String,
    pub class: LayerClass,
    pub seconds: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub phase: Phase,
    pub batch: u64,
    /// Seconds per step: one output token in decode, the whole prompt in prefill.
    pub tpot: f64,
    /// Tokens processed per second by the whole system.
    pub throughput_tok_s: f64,
    pub per_device_throughput: f64,
    /// Attention layers of one decoder block, without norms or communication.
    pub attn_block_time: f64,
    pub comm_time: f64,
    pub breakdown: Vec<BreakdownEntry>,
    pub memory: MemoryReport,
    pub feasible: bool,
    pub infeasibility_reason: Option<Infeasibility>,
}

impl StageResult {
    /// Seconds spent in one class across the stage.
    pub fn class_time(&self, class: LayerClass) -> f64 {
        self.breakdown.iter().filter(|e| e.class == class).map(|e| e.seconds).sum()
    }
}

struct Timeline {
    entries: Vec<(String, LayerClass, f64)>,
}

impl Timeline {
    fn add(&mut self, label: &str, class: LayerClass, seconds: f64) {
        match self.entries.iter_mut().find(|e| e.0 == label) {
            Some(e) => e.2 += seconds,
            None => self.entries.push((label.to_string(), class, seconds)),
        }
    }

    fn add_layers(&mut self, layers: &[LayerCost], times: &[f64], blocks: f64) {
        for (l, t) in layers.iter().zip(times) {
            self.add(l.label.as_str(), l.label.class(), t * blocks);
        }
    }
}

/// Attention layers (plus the block's norms) for the busiest device.
pub fn attention_layers(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase, b: u64) -> Result<Vec<LayerCost>> {
    let rows = b.div_ceil(plan.deg_dp as u64);
    let heads = heads_per_device(plan, model);
    let mut layers = attention_block_cost(model, phase, plan.reorder, plan.fused, rows, heads)?;
    layers.push(norm_residual_cost(model, rows * phase.query_len()));
    Ok(layers)
}

fn evaluate(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase, b: u64) -> Result<StageResult> {
    validate_plan(plan, model)?;
    phase.validate()?;
    if b == 0 {
        return Err(SimError::InvalidArgument("batch must be >= 1".into()));
    }
    let hw = &plan.system.accelerator;
    let q = phase.query_len();
    let tokens = b * q;
    let hidden = 1.0 - plan.overlap;
    let mut tl = Timeline { entries: Vec::new() };

    let attn = attention_layers(model, plan, phase, b)?;
    let attn_times = layer_times(&attn, hw);
    let attn_block_time: f64 = attn
        .iter()
        .zip(&attn_times)
        .filter(|(l, _)| l.label.class().is_attention())
        .map(|(_, t)| t)
        .sum();
    let n_dec = model.n_dec as f64;
    tl.add_layers(&attn, &attn_times, n_dec);

    let n_dense = model.n_dense_blocks() as f64;
    if n_dense > 0.0 {
        let (d_ffn, gated) = match model.ffn {
            FfnVariant::Dense { d_ffn, gated } => (d_ffn, gated),
            FfnVariant::Moe { d_dense_ffn, .. } => (d_dense_ffn, true),
        };
        let rows = b.div_ceil(plan.deg_dp as u64) * q;
        let ffn = dense_ffn_cost(model, rows, d_ffn, gated, plan.deg_tp as u64);
        let t = layer_times(&ffn, hw);
        tl.add_layers(&ffn, &t, n_dense);
    }

    let n_moe = model.n_moe_blocks() as f64;
    if n_moe > 0.0 {
        let routed = routed_expert_cost(model, tokens_per_expert(tokens, plan, model));
        let reps = experts_per_device(plan, model) as f64;
        let routed: Vec<LayerCost> = routed.into_iter().map(|l| l.repeated(reps)).collect();
        let t = layer_times(&routed, hw);
        tl.add_layers(&routed, &t, n_moe);
        let local = tokens.div_ceil(plan.n_acc() as u64);
        let shared = shared_and_router_cost(model, local);
        let t = layer_times(&shared, hw);
        tl.add_layers(&shared, &t, n_moe);
    }
    let comm_time = stage_comm(model, plan, phase, b).time * hidden;
    tl.add("comm", LayerClass::Comm, comm_time);

    let tpot: f64 = tl.entries.iter().map(|e| e.2).sum();
    let breakdown = tl
        .entries
        .into_iter()
        .map(|(label, class, seconds)| BreakdownEntry {
            label,
            class,
            seconds,
            fraction: if tpot > 0.0 { seconds / tpot } else { 0.0 },
        })
        .collect();
    let memory = memory_for_phase(model, plan, b, phase);
    let feasible = memory.fits();
    let throughput = tokens as f64 / tpot;
    Ok(StageResult {
        phase,
        batch: b,
        tpot,
        throughput_tok_s: throughput,
        per_device_throughput: throughput / plan.n_acc() as f64,
        attn_block_time,
        comm_time,
        breakdown,
        memory,
        feasible,
        infeasibility_reason: (!feasible).then_some(Infeasibility::Capacity),
    })
}

/// Communication of one full stage: TP all-reduces after attention and dense
/// FFNs, all-to-all around every MoE layer. Overlap is not applied.
pub fn stage_comm(model: &ModelSpec, plan: &DeploymentPlan, phase: Phase, b: u64) -> CommCost {
    let q = phase.query_len();
    let row_bytes = q as f64 * (model.d_emb * model.dtype_bytes) as f64;
    let ar = tp_allreduce(b, plan, row_bytes);
    let mut comm = scale(ar, (model.n_dec + model.n_dense_blocks()) as f64);
    if model.n_moe_blocks() > 0 {
        comm = comm.add(scale(moe_dispatch_combine(b * q, plan, model), model.n_moe_blocks() as f64));
    }
    comm
}

fn scale(c: CommCost, n: f64) -> CommCost {
    CommCost {
        bytes_intra: c.bytes_intra * n,
        bytes_inter: c.bytes_inter * n,
        time: c.time * n,
    }
}

/// One decode step for `b` requests at context length `l`.
pub fn decode_tpot(model: &ModelSpec, plan: &DeploymentPlan, b: u64, l: u64) -> Result<StageResult> {
    evaluate(model, plan, Phase::Decode { l }, b)
}

/// Prefill of `b` prompts of `l_in` tokens.
pub fn prefill_time(model: &ModelSpec, plan: &DeploymentPlan, b: u64, l_in: u64) -> Result<StageResult> {
    evaluate(model, plan, Phase::Prefill { l_in }, b)
}

pub fn run_phase(model: &ModelSpec, plan: &DeploymentPlan, b: u64, phase: Phase) -> Result<StageResult> {
    evaluate(model, plan, phase, b)
}

/// Whole-stage time shares, in execution order.
pub fn breakdown(model: &ModelSpec, plan: &DeploymentPlan, b: u64, phase: Phase) -> Result<Vec<BreakdownEntry>> {
    Ok(evaluate(model, plan, phase, b)?.breakdown)
}

/// Time shares within one attention block.
pub fn attention_breakdown(
    model: &ModelSpec,
    plan: &DeploymentPlan,
    b: u64,
    phase: Phase,
) -> Result<Vec<BreakdownEntry>> {
    validate_plan(plan, model)?;
    let layers: Vec<LayerCost> = attention_layers(model, plan, phase, b)?
        .into_iter()
        .filter(|l| l.label.class().is_attention())
        .collect();
    let times = layer_times(&layers, &plan.system.accelerator);
    let total: f64 = times.iter().sum();
    Ok(layers
        .iter()
        .zip(times)
        .map(|(l, t)| BreakdownEntry {
            label: l.label.as_str().to_string(),
            class: l.label.class(),
            seconds: t,
            fraction: t / total,
        })
        .collect())
}

/// Sum of breakdown fractions for one class.
pub fn class_share(entries: &[BreakdownEntry], class: LayerClass) -> f64 {
    entries.iter().filter(|e| e.class == class).map(|e| e.fraction).sum()
}

/// Share of a single label.
pub fn label_share(entries: &[BreakdownEntry], label: LayerLabel) -> f64 {
    entries
        .iter()
        .filter(|e| e.label == label.as_str())
        .map(|e| e.fraction)
        .sum()
}
