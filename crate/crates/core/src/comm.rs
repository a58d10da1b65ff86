//! Bandwidth-bound communication costs over a two-tier interconnect.

use serde::Serialize;

use crate::model::{FfnVariant, ModelSpec};
use crate::parallelism::DeploymentPlan;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CommCost {
    /// Bytes the busiest device pushes over intra-group links.
    pub bytes_intra: f64,
    /// Bytes the busiest device pushes over inter-group links.
    pub bytes_inter: f64,
    pub time: f64,
}

impl CommCost {
    fn from_bytes(bytes_intra: f64, bytes_inter: f64, phases: u32, plan: &DeploymentPlan) -> Self {
        let ic = &plan.system.interconnect;
        if bytes_intra == 0.0 && bytes_inter == 0.0 {
            return Self::default();
        }
        let mut time = bytes_intra / ic.intra_group_bw + phases as f64 * ic.link_latency;
        if bytes_inter > 0.0 {
            time += bytes_inter / ic.inter_group_bw;
        }
        Self {
            bytes_intra,
            bytes_inter,
            time,
        }
    }

    pub fn add(self, other: CommCost) -> CommCost {
        CommCost {
            bytes_intra: self.bytes_intra + other.bytes_intra,
            bytes_inter: self.bytes_inter + other.bytes_inter,
            time: self.time + other.time,
        }
    }
}

/// All-to-all dispatch of `tokens` hidden vectors to their routed experts and
/// the matching combine.
///
/// Destinations are uniform over devices. Copies addressed to the sender's own
/// device never touch a link.
pub fn moe_dispatch_combine(tokens: u64, plan: &DeploymentPlan, model: &ModelSpec) -> CommCost {
    let FfnVariant::Moe { n_k, .. } = model.ffn else {
        return CommCost::default();
    };
    let n = plan.system.n_acc as f64;
    if n_k == 0 || tokens == 0 || n <= 1.0 {
        return CommCost::default();
    }
    let g = plan.system.interconnect.group_size as f64;
    let payload = model.d_emb as f64 * model.dtype_bytes as f64;
    let per_device = 2.0 * tokens as f64 * n_k as f64 * payload / n;
    let intra = per_device * (g - 1.0) / n;
    let inter = per_device * (n - g) / n;
    CommCost::from_bytes(intra, inter, 2, plan)
}

/// Ring all-reduce of `ceil(b/deg_dp)` rows of `bytes_per_row` inside a TP group.
pub fn tp_allreduce(b: u64, plan: &DeploymentPlan, bytes_per_row: f64) -> CommCost {
    let p = plan.deg_tp as f64;
    if plan.deg_tp <= 1 || b == 0 {
        return CommCost::default();
    }
    let rows = b.div_ceil(plan.deg_dp as u64) as f64;
    let bytes = 2.0 * (p - 1.0) / p * rows * bytes_per_row;
    CommCost::from_bytes(bytes, 0.0, 2 * (plan.deg_tp - 1), plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hw::{InterconnectSpec, SystemSpec};
    use crate::model::{deepseek_r1, gpt3};

    fn plan(n: u32, group: u32) -> DeploymentPlan {
        let mut sys = SystemSpec::b200_nvlink(n);
        sys.interconnect = InterconnectSpec::nvlink5(group);
        DeploymentPlan::data_parallel(sys)
    }

    #[test]
    fn single_group_has_no_inter_traffic() {
        let c = moe_dispatch_combine(4096, &plan(32, 32), &deepseek_r1());
        assert_eq!(c.bytes_inter, 0.0);
        assert!(c.time > 0.0);
    }

    #[test]
    fn zero_topk_is_free() {
        let mut m = deepseek_r1();
        if let FfnVariant::Moe { n_k, .. } = &mut m.ffn {
            *n_k = 0;
        }
        assert_eq!(moe_dispatch_combine(4096, &plan(32, 8), &m), CommCost::default());
        assert_eq!(moe_dispatch_combine(4096, &plan(32, 8), &gpt3()), CommCost::default());
    }

    #[test]
    fn halving_bandwidth_doubles_time() {
        let m = deepseek_r1();
        let p = plan(64, 8);
        let mut slow = p.clone();
        slow.system.interconnect = p.system.interconnect.scaled(0.5);
        let a = moe_dispatch_combine(4096, &p, &m).time;
        let b = moe_dispatch_combine(4096, &slow, &m).time;
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn allreduce_ring_volume() {
        let mut p = DeploymentPlan::new(SystemSpec::b200_nvlink(2), 2, 1);
        assert_eq!(tp_allreduce(10, &p, 100.0).bytes_intra, 1000.0);
        p.deg_tp = 1;
        p.deg_dp = 2;
        assert_eq!(tp_allreduce(10, &p, 100.0), CommCost::default());
    }
}
