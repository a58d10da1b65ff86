//! Deployment plans: how attention and MoE blocks are split over accelerators.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::ActivationModel;
use crate::error::{Result, SimError};
use crate::hw::SystemSpec;
use crate::model::{AttentionVariant, FfnVariant, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prefill,
    #[default]
    Decode,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Prefill => "prefill",
            Stage::Decode => "decode",
        }
    }

    /// Prefill runs MLA without reordering; decode reorders.
    pub fn default_reorder(&self) -> bool {
        matches!(self, Stage::Decode)
    }
}

impl FromStr for Stage {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prefill" => Ok(Stage::Prefill),
            "decode" => Ok(Stage::Decode),
            other => Err(SimError::InvalidArgument(format!("unknown stage `{other}`"))),
        }
    }
}

/// Which block an effective batch is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Attention,
    MoeExpert,
}

impl FromStr for BlockKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" | "attn" => Ok(BlockKind::Attention),
            "moe_expert" | "moe" | "expert" => Ok(BlockKind::MoeExpert),
            other => Err(SimError::InvalidArgument(format!("invalid block `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub system: SystemSpec,
    pub deg_tp: u32,
    pub deg_dp: u32,
    pub deg_ep: u32,
    pub reorder: bool,
    pub fused: bool,
    pub stage: Stage,
    /// Load multiplier on the busiest expert (1.0 = uniform routing).
    pub skew: f64,
    /// Fraction of communication hidden behind compute, in [0, 1].
    pub overlap: f64,
    pub activation: ActivationModel,
}

impl DeploymentPlan {
    /// TP x DP attention, EP over all devices, decode defaults.
    pub fn new(system: SystemSpec, deg_tp: u32, deg_dp: u32) -> Self {
        let deg_ep = system.n_acc;
        Self {
            system,
            deg_tp,
            deg_dp,
            deg_ep,
            reorder: true,
            fused: true,
            stage: Stage::Decode,
            skew: 1.0,
            overlap: 0.0,
            activation: ActivationModel::default(),
        }
    }

    /// Pure data parallel attention with expert parallelism across all devices.
    pub fn data_parallel(system: SystemSpec) -> Self {
        let n = system.n_acc;
        Self::new(system, 1, n)
    }

    /// Switches stage and resets `reorder` to that stage's default.
    pub fn for_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self.reorder = stage.default_reorder();
        self
    }

    pub fn with_reorder(mut self, reorder: bool) -> Self {
        self.reorder = reorder;
        self
    }

    pub fn with_fused(mut self, fused: bool) -> Self {
        self.fused = fused;
        self
    }

    pub fn n_acc(&self) -> u32 {
        self.system.n_acc
    }
}

/// Every violated plan invariant, or Ok.
pub fn validate_plan(plan: &DeploymentPlan, model: &ModelSpec) -> Result<()> {
    let mut v = Vec::new();
    if let Err(e) = plan.system.validate() {
        v.push(e.to_string());
    }
    if let Err(e) = model.validate() {
        v.push(e.to_string());
    }
    let n_acc = plan.system.n_acc as u64;
    let (tp, dp, ep) = (plan.deg_tp as u64, plan.deg_dp as u64, plan.deg_ep as u64);
    if tp == 0 || dp == 0 || ep == 0 {
        v.push("parallelism degrees must be >= 1".into());
    }
    if tp * dp != n_acc {
        v.push(format!("deg_tp ({tp}) x deg_dp ({dp}) must equal n_acc ({n_acc})"));
    }
    if tp > 0 && model.n_hd % tp != 0 {
        v.push(format!("deg_tp ({tp}) must divide n_hd ({})", model.n_hd));
    }
    if let FfnVariant::Moe { n_e, .. } = model.ffn {
        if ep != n_acc {
            v.push(format!("deg_ep ({ep}) must equal n_acc ({n_acc})"));
        }
        if n_e > 0 && ep > n_e {
            v.push(format!("deg_ep ({ep}) must not exceed n_e ({n_e})"));
        }
    }
    if !(plan.skew >= 1.0 && plan.skew.is_finite()) {
        v.push("skew must be >= 1".into());
    }
    if !(0.0..=1.0).contains(&plan.overlap) {
        v.push("overlap must lie in [0, 1]".into());
    }
    if let Err(e) = plan.activation.validate() {
        v.push(e.to_string());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(SimError::InvalidPlan(v))
    }
}

/// Rows processed by the busiest device for the given block.
pub fn effective_batch(block: BlockKind, b: u64, plan: &DeploymentPlan, model: &ModelSpec) -> Result<u64> {
    if b == 0 {
        return Err(SimError::InvalidArgument("batch must be >= 1".into()));
    }
    Ok(match block {
        BlockKind::Attention => b.div_ceil(plan.deg_dp as u64),
        BlockKind::MoeExpert => tokens_per_expert(b, plan, model),
    })
}

/// Tokens reaching the busiest routed expert when `tokens` are routed.
pub fn tokens_per_expert(tokens: u64, plan: &DeploymentPlan, model: &ModelSpec) -> u64 {
    match model.ffn {
        FfnVariant::Moe { n_e, n_k, .. } if n_e > 0 => {
            let mean = tokens as f64 * n_k as f64 / n_e as f64;
            ceil_eps(mean * plan.skew)
        }
        _ => tokens,
    }
}

/// Ceiling that ignores floating-point noise just above an integer.
pub(crate) fn ceil_eps(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

pub fn heads_per_device(plan: &DeploymentPlan, model: &ModelSpec) -> u64 {
    model.n_hd / plan.deg_tp as u64
}

/// Routed experts hosted by the busiest device.
pub fn experts_per_device(plan: &DeploymentPlan, model: &ModelSpec) -> u64 {
    match model.ffn {
        FfnVariant::Moe { n_e, .. } => n_e.div_ceil(plan.deg_ep as u64),
        FfnVariant::Dense { .. } => 0,
    }
}

/// How many devices hold a copy of each cached KV byte.
///
/// MLA's latent cache is shared by all heads, so every TP device keeps it
/// whole. MHA/GQA split KV heads across TP ranks until each rank has one.
pub fn kv_replication(plan: &DeploymentPlan, model: &ModelSpec) -> f64 {
    let tp = plan.deg_tp as u64;
    match model.attention {
        AttentionVariant::Mla { .. } => tp as f64,
        _ => tp as f64 / tp.min(model.n_kv_heads()) as f64,
    }
}

/// KV cache bytes held by one device for `b` requests at context `l`.
pub fn ckv_replication_bytes(plan: &DeploymentPlan, model: &ModelSpec, b: u64, l: u64) -> f64 {
    let total = b as f64 * l as f64 * model.kv_bytes_per_token() as f64;
    total * kv_replication(plan, model) / plan.n_acc() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{deepseek_r1, gpt3};

    fn plan(n: u32, tp: u32, dp: u32) -> DeploymentPlan {
        DeploymentPlan::new(SystemSpec::b200_nvlink(n), tp, dp)
    }

    #[test]
    fn effective_batches() {
        let m = deepseek_r1();
        let p = plan(32, 1, 32);
        assert_eq!(effective_batch(BlockKind::Attention, 9000, &p, &m).unwrap(), 282);
        assert_eq!(effective_batch(BlockKind::MoeExpert, 256, &p, &m).unwrap(), 8);
        assert_eq!(effective_batch(BlockKind::Attention, 77, &plan(1, 1, 1), &m).unwrap(), 77);
        assert!(effective_batch(BlockKind::Attention, 0, &p, &m).is_err());
        assert!("ffn".parse::<BlockKind>().is_err());
    }

    #[test]
    fn skew_scales_busiest_expert() {
        let m = deepseek_r1();
        let mut p = plan(32, 1, 32);
        p.skew = 1.5;
        assert_eq!(tokens_per_expert(256, &p, &m), 12);
    }

    #[test]
    fn heads() {
        let mut m = gpt3();
        m.n_hd = 4;
        assert_eq!(heads_per_device(&plan(2, 2, 1), &m), 2);
        let ds = deepseek_r1();
        assert_eq!(heads_per_device(&plan(1, 1, 1), &ds), 128);
        assert_eq!(heads_per_device(&plan(128, 128, 1), &ds), 1);
    }

    #[test]
    fn replication() {
        let ds = deepseek_r1();
        let a = ckv_replication_bytes(&plan(4, 4, 1), &ds, 16, 1024);
        let b = ckv_replication_bytes(&plan(1, 1, 1), &ds, 16, 1024);
        assert_eq!(a, b);
        let g = gpt3();
        let a = ckv_replication_bytes(&plan(4, 4, 1), &g, 16, 1024);
        let b = ckv_replication_bytes(&plan(1, 1, 1), &g, 16, 1024);
        assert_eq!(a * 4.0, b);
    }

    #[test]
    fn validation_collects_all() {
        let ds = deepseek_r1();
        assert!(validate_plan(&plan(32, 1, 32), &ds).is_ok());
        let mut bad = plan(32, 3, 8);
        bad.deg_ep = 16;
        match validate_plan(&bad, &ds) {
            Err(SimError::InvalidPlan(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_defaults() {
        let p = plan(1, 1, 1).for_stage(Stage::Prefill);
        assert!(!p.reorder);
        assert!(p.for_stage(Stage::Decode).reorder);
    }
}
