//! Sweep configuration files (TOML or JSON) and command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ActivationModel;
use crate::error::{Result, SimError};
use crate::hw::{accelerator_preset, AcceleratorSpec, InterconnectSpec, SystemSpec, GIGA};
use crate::model::{model_preset, AttentionVariant, FfnVariant, ModelSpec};
use crate::parallelism::{validate_plan, DeploymentPlan, Stage};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub tflops: Option<f64>,
    pub mem_bw_gbps: Option<f64>,
    pub mem_cap_gb: Option<f64>,
    pub mfu: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectSection {
    pub intra_gbps: Option<f64>,
    pub inter_gbps: Option<f64>,
    /// Defaults to the plan's `n_acc` (one group).
    pub group_size: Option<u32>,
    pub latency_us: Option<f64>,
}

/// A preset, optionally with individual fields overridden, or a full inline spec.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub n_dec: Option<u64>,
    pub d_emb: Option<u64>,
    pub n_hd: Option<u64>,
    pub d_hd: Option<u64>,
    pub attention: Option<AttentionVariant>,
    pub ffn: Option<FfnVariant>,
    pub dtype_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub id: Option<String>,
    pub n_acc: Option<u32>,
    pub deg_tp: Option<u32>,
    pub deg_dp: Option<u32>,
    pub reorder: Option<bool>,
    pub fused: Option<bool>,
    pub stage: Option<Stage>,
    pub skew: Option<f64>,
    pub overlap: Option<f64>,
    pub activation: Option<ActivationModel>,
    /// Independent replicas of this system; system throughput scales with it.
    pub instances: Option<u32>,
    /// Per-plan interconnect; falls back to the top-level section.
    pub interconnect: Option<InterconnectSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub batch_sizes: Option<Vec<u64>>,
    pub seq_lens: Option<Vec<u64>>,
    pub slo_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(SimError::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: Option<Format>,
}

/// The file as written, before presets are expanded.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub hardware: HardwareSection,
    #[serde(default)]
    pub interconnect: InterconnectSection,
    #[serde(default)]
    pub model: ModelSection,
    pub plan: Option<PlanSection>,
    pub plans: Option<Vec<PlanSection>>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RawConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| match e {
            SimError::Config(msg) => SimError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub hardware: Option<String>,
    pub n_acc: Option<u32>,
    pub deg_tp: Option<u32>,
    pub deg_dp: Option<u32>,
    pub stage: Option<Stage>,
    pub reorder: Option<bool>,
    pub fused: Option<bool>,
    pub batch_sizes: Option<Vec<u64>>,
    pub seq_lens: Option<Vec<u64>>,
    pub slo_ms: Option<f64>,
    pub out: Option<String>,
    pub format: Option<Format>,
}

impl Overrides {
    pub fn apply(&self, raw: &mut RawConfig) {
        if let Some(m) = &self.model {
            raw.model = ModelSection {
                preset: Some(m.clone()),
                ..Default::default()
            };
        }
        if let Some(h) = &self.hardware {
            raw.hardware = HardwareSection {
                preset: Some(h.clone()),
                ..Default::default()
            };
        }
        let plan_touched = self.n_acc.is_some()
            || self.deg_tp.is_some()
            || self.deg_dp.is_some()
            || self.stage.is_some()
            || self.reorder.is_some()
            || self.fused.is_some();
        if plan_touched {
            let mut plans = raw.plans.take().unwrap_or_default();
            if let Some(p) = raw.plan.take() {
                plans.insert(0, p);
            }
            if plans.is_empty() {
                plans.push(PlanSection::default());
            }
            for p in &mut plans {
                if self.n_acc.is_some() {
                    p.n_acc = self.n_acc;
                    p.deg_tp = None;
                    p.deg_dp = None;
                }
                p.deg_tp = self.deg_tp.or(p.deg_tp);
                p.deg_dp = self.deg_dp.or(p.deg_dp);
                p.stage = self.stage.or(p.stage);
                p.reorder = self.reorder.or(p.reorder);
                p.fused = self.fused.or(p.fused);
            }
            raw.plans = Some(plans);
        }
        if let Some(b) = &self.batch_sizes {
            raw.sweep.batch_sizes = Some(b.clone());
        }
        if let Some(l) = &self.seq_lens {
            raw.sweep.seq_lens = Some(l.clone());
        }
        if self.slo_ms.is_some() {
            raw.sweep.slo_ms = self.slo_ms;
        }
        if self.out.is_some() {
            raw.output.path = self.out.clone();
        }
        if self.format.is_some() {
            raw.output.format = self.format;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPlan {
    pub id: String,
    pub plan: DeploymentPlan,
    pub instances: u32,
}

/// A fully resolved, validated sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub model: ModelSpec,
    pub plans: Vec<NamedPlan>,
    pub batch_sizes: Vec<u64>,
    pub seq_lens: Vec<u64>,
    /// Seconds.
    pub slo: Option<f64>,
    pub out: Option<String>,
    pub format: Format,
}

pub const DEFAULT_MODEL: &str = "deepseek-r1";
pub const DEFAULT_HARDWARE: &str = "b200";
pub const DEFAULT_N_ACC: u32 = 32;

pub fn default_batch_sizes() -> Vec<u64> {
    (0..=13).map(|k| 1u64 << k).collect()
}

pub fn default_seq_lens() -> Vec<u64> {
    vec![1024, 2048, 4096, 8192, 16384]
}

pub fn resolve_model(s: &ModelSection) -> Result<ModelSpec> {
    let mut m = model_preset(s.preset.as_deref().unwrap_or(DEFAULT_MODEL))?;
    if let Some(v) = &s.name {
        m.name = v.clone();
    }
    m.n_dec = s.n_dec.unwrap_or(m.n_dec);
    m.d_emb = s.d_emb.unwrap_or(m.d_emb);
    m.n_hd = s.n_hd.unwrap_or(m.n_hd);
    m.d_hd = s.d_hd.unwrap_or(m.d_hd);
    m.attention = s.attention.unwrap_or(m.attention);
    m.ffn = s.ffn.unwrap_or(m.ffn);
    m.dtype_bytes = s.dtype_bytes.unwrap_or(m.dtype_bytes);
    m.validate()?;
    Ok(m)
}

pub fn resolve_hardware(s: &HardwareSection) -> Result<AcceleratorSpec> {
    let inline = s.tflops.is_some() || s.mem_bw_gbps.is_some() || s.mem_cap_gb.is_some();
    let mut hw = match (&s.preset, inline) {
        (Some(p), _) => accelerator_preset(p)?,
        (None, true) => AcceleratorSpec {
            name: "custom".into(),
            peak_flops: 0.0,
            mem_bw: 0.0,
            mem_cap: 0.0,
            mfu: 1.0,
        },
        (None, false) => accelerator_preset(DEFAULT_HARDWARE)?,
    };
    if let Some(v) = &s.name {
        hw.name = v.clone();
    }
    if let Some(v) = s.tflops {
        hw.peak_flops = v * 1e12;
    }
    if let Some(v) = s.mem_bw_gbps {
        hw.mem_bw = v * GIGA;
    }
    if let Some(v) = s.mem_cap_gb {
        hw.mem_cap = v * GIGA;
    }
    if let Some(v) = s.mfu {
        hw.mfu = v;
    }
    hw.validate()?;
    Ok(hw)
}

fn resolve_interconnect(s: &InterconnectSection, n_acc: u32) -> Result<InterconnectSpec> {
    let base = InterconnectSpec::nvlink5(s.group_size.unwrap_or(n_acc));
    let ic = InterconnectSpec {
        intra_group_bw: s.intra_gbps.map_or(base.intra_group_bw, |v| v * GIGA),
        inter_group_bw: s.inter_gbps.map_or(base.inter_group_bw, |v| v * GIGA),
        group_size: base.group_size,
        link_latency: s.latency_us.map_or(0.0, |v| v * 1e-6),
    };
    ic.validate()?;
    Ok(ic)
}

fn resolve_plan(p: &PlanSection, idx: usize, raw: &RawConfig, hw: &AcceleratorSpec) -> Result<NamedPlan> {
    let n_acc = p
        .n_acc
        .or_else(|| Some(p.deg_tp? * p.deg_dp?))
        .unwrap_or(DEFAULT_N_ACC);
    let tp = p.deg_tp.unwrap_or(1);
    let dp = p.deg_dp.unwrap_or(if tp > 0 { n_acc / tp } else { 0 });
    let ic = resolve_interconnect(p.interconnect.as_ref().unwrap_or(&raw.interconnect), n_acc)?;
    let system = SystemSpec {
        accelerator: hw.clone(),
        n_acc,
        interconnect: ic,
    };
    let stage = p.stage.unwrap_or_default();
    let mut plan = DeploymentPlan::new(system, tp, dp).for_stage(stage);
    plan.reorder = p.reorder.unwrap_or(plan.reorder);
    plan.fused = p.fused.unwrap_or(plan.fused);
    plan.skew = p.skew.unwrap_or(plan.skew);
    plan.overlap = p.overlap.unwrap_or(plan.overlap);
    plan.activation = p.activation.unwrap_or(plan.activation);
    let id = p.id.clone().unwrap_or_else(|| format!("plan{idx}"));
    Ok(NamedPlan {
        id,
        plan,
        instances: p.instances.unwrap_or(1).max(1),
    })
}

impl SweepConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let model = resolve_model(&raw.model)?;
        let hw = resolve_hardware(&raw.hardware)?;
        let mut sections: Vec<PlanSection> = raw.plan.iter().cloned().collect();
        sections.extend(raw.plans.iter().flatten().cloned());
        if sections.is_empty() {
            sections.push(PlanSection::default());
        }
        let mut plans = Vec::with_capacity(sections.len());
        let mut problems = Vec::new();
        for (i, s) in sections.iter().enumerate() {
            let named = resolve_plan(s, i, raw, &hw)?;
            if let Err(SimError::InvalidPlan(v)) = validate_plan(&named.plan, &model) {
                problems.extend(v.into_iter().map(|m| format!("{}: {m}", named.id)));
            }
            plans.push(named);
        }
        if !problems.is_empty() {
            return Err(SimError::InvalidPlan(problems));
        }
        let batch_sizes = raw.sweep.batch_sizes.clone().unwrap_or_else(default_batch_sizes);
        let seq_lens = raw.sweep.seq_lens.clone().unwrap_or_else(default_seq_lens);
        if batch_sizes.is_empty() || seq_lens.is_empty() {
            return Err(SimError::Config("sweep grids must be nonempty".into()));
        }
        if batch_sizes.contains(&0) || seq_lens.contains(&0) {
            return Err(SimError::Config("batch sizes and sequence lengths must be >= 1".into()));
        }
        let slo = match raw.sweep.slo_ms {
            Some(ms) if !(ms > 0.0 && ms.is_finite()) => {
                return Err(SimError::Config("slo_ms must be > 0".into()))
            }
            other => other.map(|ms| ms / 1e3),
        };
        Ok(Self {
            model,
            plans,
            batch_sizes,
            seq_lens,
            slo,
            out: raw.output.path.clone(),
            format: raw.output.format.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_presets() {
        let raw = RawConfig::parse(
            r#"
[hardware]
preset = "b200"

[model]
preset = "deepseek-r1"

[plan]
n_acc = 32
deg_tp = 1
deg_dp = 32

[sweep]
batch_sizes = [1, 2]
seq_lens = [1024, 2048]
"#,
            false,
        )
        .unwrap();
        let cfg = SweepConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.plans.len(), 1);
        assert_eq!(cfg.plans[0].plan.system.interconnect.group_size, 32);
        assert!(cfg.plans[0].plan.reorder);
    }

    #[test]
    fn unknown_field_reports_location() {
        let err = RawConfig::parse("[plan]\ndeg_tpp = 2\n", false).unwrap_err().to_string();
        assert!(err.contains("deg_tpp") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn json_equivalent() {
        let raw = RawConfig::parse(
            r#"{"model": {"preset": "gpt-3"}, "plans": [{"n_acc": 8, "deg_tp": 8, "stage": "prefill"}]}"#,
            true,
        )
        .unwrap();
        let cfg = SweepConfig::from_raw(&raw).unwrap();
        let p = &cfg.plans[0].plan;
        assert_eq!((p.deg_tp, p.deg_dp), (8, 1));
        assert!(!p.reorder);
    }

    #[test]
    fn invalid_plan_aborts() {
        let raw = RawConfig::parse("[plan]\nn_acc = 32\ndeg_tp = 3\ndeg_dp = 8\n", false).unwrap();
        assert!(matches!(SweepConfig::from_raw(&raw), Err(SimError::InvalidPlan(_))));
    }

    #[test]
    fn inline_hardware_and_overrides() {
        let mut raw = RawConfig::parse(
            "[hardware]\ntflops = 100\nmem_bw_gbps = 1000\nmem_cap_gb = 80\n[model]\npreset = \"gpt-3\"\nn_dec = 2\n",
            false,
        )
        .unwrap();
        Overrides {
            n_acc: Some(4),
            deg_tp: Some(4),
            ..Default::default()
        }
        .apply(&mut raw);
        let cfg = SweepConfig::from_raw(&raw).unwrap();
        assert_eq!(cfg.model.n_dec, 2);
        assert_eq!(cfg.plans[0].plan.system.accelerator.ridge_point(), 100.0);
        assert_eq!(cfg.plans[0].plan.deg_dp, 1);
    }
}
