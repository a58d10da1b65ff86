//! Batch-size limits: ridge point, memory capacity and latency SLO.

use serde::Serialize;

use crate::engine::{activation_bytes_per_request, decode_tpot, memory_required, stage_comm, system_weight_bytes};
use crate::error::Result;
use crate::layer_cost::Phase;
use crate::model::{FfnVariant, ModelSpec};
use crate::parallelism::{ceil_eps, kv_replication, validate_plan, DeploymentPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    /// The ridge-point batch fits under both capacity and SLO.
    RidgePoint,
    Capacity,
    Slo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchLimits {
    pub b_attn: u64,
    pub b_moe: u64,
    pub b_rp: u64,
    pub b_cap: u64,
    /// From the minimum-latency bound (weight load, KV and activation reads, communication).
    pub b_slo: Option<u64>,
    /// From the full decode-step model.
    pub b_slo_engine: Option<u64>,
    pub binding: Binding,
    pub notes: Vec<String>,
}

/// (b_attn, b_moe, b_rp): batches that put attention and expert FCs at the ridge point.
pub fn b_rp(model: &ModelSpec, plan: &DeploymentPlan) -> (u64, u64, u64) {
    let rp = plan.system.accelerator.ridge_point();
    let b_attn = ceil_eps(rp * plan.deg_dp as f64);
    let b_moe = match model.ffn {
        FfnVariant::Moe { n_e, n_k, .. } if n_k > 0 => ceil_eps(rp * n_e as f64 / n_k as f64),
        _ => b_attn,
    };
    (b_attn, b_moe, b_attn.max(b_moe))
}

/// Numerator and per-request denominator of the capacity bound.
fn capacity_terms(model: &ModelSpec, plan: &DeploymentPlan, l: u64) -> (f64, f64) {
    let free = plan.system.accelerator.mem_cap * plan.n_acc() as f64 - system_weight_bytes(model, plan);
    let per_request = model.kv_bytes_per_token() as f64 * l as f64 * kv_replication(plan, model)
        + activation_bytes_per_request(model, plan, Phase::Decode { l });
    (free, per_request)
}

/// Largest batch whose weights, KV cache and activations fit in memory.
/// Zero when the weights alone overflow.
pub fn b_cap(model: &ModelSpec, plan: &DeploymentPlan, l: u64) -> u64 {
    let (free, per_request) = capacity_terms(model, plan, l);
    if free <= 0.0 {
        return 0;
    }
    floor_eps(free / per_request)
}

fn floor_eps(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as u64
    } else {
        x.floor() as u64
    }
}

/// Lower bound on the decode step: weights plus KV and activations streamed
/// once per block, plus communication.
pub fn tpot_min(model: &ModelSpec, plan: &DeploymentPlan, b: u64, l: u64) -> f64 {
    let mem = memory_required(model, plan, b, l);
    let bw = plan.system.accelerator.mem_bw;
    let bytes = mem.weights + mem.kv_cache + model.n_dec as f64 * mem.activations;
    let comm = if b == 0 { 0.0 } else { stage_comm(model, plan, Phase::Decode { l }, b).time };
    bytes / bw + comm * (1.0 - plan.overlap)
}

/// Largest `b` with `f(b) <= limit`, for nondecreasing `f`. `f(0)` must hold.
fn largest_satisfying(mut f: impl FnMut(u64) -> bool) -> u64 {
    let mut hi = 1u64;
    while f(hi) {
        if hi >= 1 << 40 {
            return hi;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // f(lo) holds, f(hi) fails.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Largest batch whose minimum decode step meets `tpot_slo` seconds.
/// Zero when the weight-load floor alone misses it.
pub fn b_slo(model: &ModelSpec, plan: &DeploymentPlan, l: u64, tpot_slo: f64) -> u64 {
    if tpot_min(model, plan, 0, l) > tpot_slo {
        return 0;
    }
    largest_satisfying(|b| tpot_min(model, plan, b, l) <= tpot_slo)
}

/// Same as [`b_slo`] but against the full decode-step latency.
pub fn b_slo_engine(model: &ModelSpec, plan: &DeploymentPlan, l: u64, tpot_slo: f64) -> Result<u64> {
    validate_plan(plan, model)?;
    if decode_tpot(model, plan, 1, l)?.tpot > tpot_slo {
        return Ok(0);
    }
    Ok(largest_satisfying(|b| {
        b == 0 || decode_tpot(model, plan, b, l).map(|r| r.tpot <= tpot_slo).unwrap_or(false)
    }))
}

pub fn batch_limits(model: &ModelSpec, plan: &DeploymentPlan, l: u64, tpot_slo: Option<f64>) -> Result<BatchLimits> {
    validate_plan(plan, model)?;
    let (b_attn, b_moe, rp) = b_rp(model, plan);
    let cap = b_cap(model, plan, l);
    let mut notes = Vec::new();
    if cap == 0 {
        notes.push("weights exceed capacity".to_string());
    }
    let (slo, slo_engine) = match tpot_slo {
        Some(t) => {
            let s = b_slo(model, plan, l, t);
            if s == 0 {
                notes.push("tpot_slo is below the weight-load floor".to_string());
            }
            (Some(s), Some(b_slo_engine(model, plan, l, t)?))
        }
        None => (None, None),
    };
    let upper = slo.map_or(cap, |s| s.min(cap));
    let binding = if rp <= upper {
        Binding::RidgePoint
    } else if slo.is_some_and(|s| s < cap) {
        Binding::Slo
    } else {
        Binding::Capacity
    };
    Ok(BatchLimits {
        b_attn,
        b_moe,
        b_rp: rp,
        b_cap: cap,
        b_slo: slo,
        b_slo_engine: slo_engine,
        binding,
        notes,
    })
}
