//! Sweep execution and CSV/JSON output.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, NamedPlan, SweepConfig};
use crate::engine::run_phase;
use crate::error::{Result, SimError};
use crate::hw::{AcceleratorSpec, InterconnectSpec, SystemSpec, GIGA};
use crate::layer_cost::{LayerClass, Phase};
use crate::limits::{batch_limits, Binding};
use crate::model::ModelSpec;
use crate::parallelism::{DeploymentPlan, Stage};

/// One grid point. Units: seconds, tokens/second, bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub model: String,
    pub plan: String,
    pub batch: u64,
    pub seq_len: u64,
    pub phase: &'static str,
    pub tpot_s: f64,
    pub throughput_tok_s: f64,
    pub per_device_tok_s: f64,
    pub mem_per_device_bytes: f64,
    pub feasible: bool,
    pub infeasible_reason: Option<&'static str>,
    pub binding_limit: Binding,
    /// Seconds per class, keyed by class name.
    pub breakdown_s: BTreeMap<&'static str, f64>,
}

fn phase_for(stage: Stage, l: u64) -> Phase {
    match stage {
        Stage::Decode => Phase::Decode { l },
        Stage::Prefill => Phase::Prefill { l_in: l },
    }
}

fn evaluate_point(model: &ModelSpec, np: &NamedPlan, b: u64, l: u64, binding: Binding) -> Result<SweepRecord> {
    let r = run_phase(model, &np.plan, b, phase_for(np.plan.stage, l))?;
    let inst = np.instances as f64;
    Ok(SweepRecord {
        model: model.name.clone(),
        plan: np.id.clone(),
        batch: b,
        seq_len: l,
        phase: np.plan.stage.as_str(),
        tpot_s: r.tpot,
        throughput_tok_s: r.throughput_tok_s * inst,
        per_device_tok_s: r.per_device_throughput,
        mem_per_device_bytes: r.memory.total,
        feasible: r.feasible,
        infeasible_reason: r.infeasibility_reason.map(|x| x.as_str()),
        binding_limit: binding,
        breakdown_s: LayerClass::ALL.iter().map(|c| (c.as_str(), r.class_time(*c))).collect(),
    })
}

/// Evaluates every (plan, L, B) point. Output order is plan, then L, then B,
/// whatever the thread count.
pub fn run_sweep(cfg: &SweepConfig, jobs: Option<usize>) -> Result<Vec<SweepRecord>> {
    let mut bindings = Vec::new();
    for np in &cfg.plans {
        for &l in &cfg.seq_lens {
            bindings.push(batch_limits(&cfg.model, &np.plan, l, cfg.slo)?.binding);
        }
    }
    let mut points = Vec::new();
    for (pi, np) in cfg.plans.iter().enumerate() {
        for (li, &l) in cfg.seq_lens.iter().enumerate() {
            let binding = bindings[pi * cfg.seq_lens.len() + li];
            for &b in &cfg.batch_sizes {
                points.push((np, l, b, binding));
            }
        }
    }
    let work = || -> Result<Vec<SweepRecord>> {
        points
            .par_iter()
            .map(|&(np, l, b, binding)| evaluate_point(&cfg.model, np, b, l, binding))
            .collect()
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "model",
    "plan",
    "batch",
    "seq_len",
    "phase",
    "tpot_s",
    "throughput_tok_s",
    "per_device_tok_s",
    "mem_per_device_bytes",
    "feasible",
    "infeasible_reason",
    "binding_limit",
];

fn binding_str(b: Binding) -> &'static str {
    match b {
        Binding::RidgePoint => "ridge_point",
        Binding::Capacity => "capacity",
        Binding::Slo => "slo",
    }
}

pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend(LayerClass::ALL.iter().map(|c| format!("{}_s", c.as_str())));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.model.clone(),
            r.plan.clone(),
            r.batch.to_string(),
            r.seq_len.to_string(),
            r.phase.to_string(),
            r.tpot_s.to_string(),
            r.throughput_tok_s.to_string(),
            r.per_device_tok_s.to_string(),
            r.mem_per_device_bytes.to_string(),
            r.feasible.to_string(),
            r.infeasible_reason.unwrap_or("").to_string(),
            binding_str(r.binding_limit).to_string(),
        ];
        row.extend(LayerClass::ALL.iter().map(|c| r.breakdown_s[c.as_str()].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[SweepRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records)?;
    writeln!(out)?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[SweepRecord], format: Format, out: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(records, out),
        Format::Json => write_json(records, out),
    }
}

/// Highest feasible system throughput of one plan at one sequence length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakRecord {
    pub plan: String,
    pub seq_len: u64,
    /// Batch per instance at the peak; 0 when nothing is feasible.
    pub batch: u64,
    pub throughput_tok_s: f64,
    pub tpot_s: f64,
}

/// Peak feasible throughput per (plan, L) over the batch grid.
pub fn peak_throughput(records: &[SweepRecord]) -> Vec<PeakRecord> {
    let mut out: Vec<PeakRecord> = Vec::new();
    for r in records {
        let idx = match out.iter().position(|p| p.plan == r.plan && p.seq_len == r.seq_len) {
            Some(i) => i,
            None => {
                out.push(PeakRecord {
                    plan: r.plan.clone(),
                    seq_len: r.seq_len,
                    batch: 0,
                    throughput_tok_s: 0.0,
                    tpot_s: 0.0,
                });
                out.len() - 1
            }
        };
        let p = &mut out[idx];
        if r.feasible && r.throughput_tok_s > p.throughput_tok_s {
            p.batch = r.batch;
            p.throughput_tok_s = r.throughput_tok_s;
            p.tpot_s = r.tpot_s;
        }
    }
    out
}

/// Eight 32-device NVLink systems against one 256-device system whose links
/// run at 900, 300 and 100 GB/s.
pub fn topology_plans(accelerator: &AcceleratorSpec) -> Vec<NamedPlan> {
    let system = |n: u32, ic: InterconnectSpec| SystemSpec {
        accelerator: accelerator.clone(),
        n_acc: n,
        interconnect: ic,
    };
    let mut plans = vec![NamedPlan {
        id: "32gpu_x8".into(),
        plan: DeploymentPlan::data_parallel(system(32, InterconnectSpec::nvlink5(32))),
        instances: 8,
    }];
    for gbps in [900.0, 300.0, 100.0] {
        let bw = gbps * GIGA;
        let ic = InterconnectSpec {
            intra_group_bw: bw,
            inter_group_bw: bw,
            group_size: 256,
            link_latency: 0.0,
        };
        plans.push(NamedPlan {
            id: format!("256gpu_{gbps}gbps"),
            plan: DeploymentPlan::data_parallel(system(256, ic)),
            instances: 1,
        });
    }
    plans
}

/// Geometric batch grid from `lo` to `hi`, each step at least 1 and about 25%.
pub fn geometric_batches(lo: u64, hi: u64) -> Vec<u64> {
    let mut v = Vec::new();
    let mut b = lo.max(1);
    while b <= hi {
        v.push(b);
        b = (b * 5 / 4).max(b + 1);
    }
    v
}

/// Peak throughput of every plan in `cfg` at every sequence length.
pub fn compare_topologies(cfg: &SweepConfig, jobs: Option<usize>) -> Result<Vec<PeakRecord>> {
    Ok(peak_throughput(&run_sweep(cfg, jobs)?))
}
