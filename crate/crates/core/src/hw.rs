//! Accelerator, interconnect and system descriptions plus the roofline primitive.
//!
//! All quantities are in SI base units: operations/second, bytes/second, bytes
//! and seconds. Vendor figures quoted in TFLOPS or GB/s are converted with
//! decimal prefixes (1 GB = 1e9 bytes).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const TERA: f64 = 1e12;
pub const GIGA: f64 = 1e9;

/// One accelerator: peak arithmetic throughput, main-memory bandwidth and capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorSpec {
    pub name: String,
    /// Peak operations/second (BF16 unless overridden).
    pub peak_flops: f64,
    /// Main-memory bandwidth in bytes/second.
    pub mem_bw: f64,
    /// Main-memory capacity in bytes.
    pub mem_cap: f64,
    /// Fraction of `peak_flops` actually reachable. 1.0 is the ideal roofline.
    #[serde(default = "default_mfu")]
    pub mfu: f64,
}

fn default_mfu() -> f64 {
    1.0
}

impl AcceleratorSpec {
    pub fn new(name: impl Into<String>, peak_flops: f64, mem_bw: f64, mem_cap: f64) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            peak_flops,
            mem_bw,
            mem_cap,
            mfu: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from the vendor units used in datasheets (TFLOPS, GB/s, GB).
    pub fn from_datasheet(name: impl Into<String>, tflops: f64, mem_bw_gbps: f64, mem_cap_gb: f64) -> Result<Self> {
        Self::new(name, tflops * TERA, mem_bw_gbps * GIGA, mem_cap_gb * GIGA)
    }

    pub fn with_mfu(mut self, mfu: f64) -> Result<Self> {
        self.mfu = mfu;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.peak_flops) {
            return Err(SimError::InvalidHardware(format!("{}: peak_flops must be > 0", self.name)));
        }
        if !positive(self.mem_bw) {
            return Err(SimError::InvalidHardware(format!("{}: mem_bw must be > 0", self.name)));
        }
        if !positive(self.mem_cap) {
            return Err(SimError::InvalidHardware(format!("{}: mem_cap must be > 0", self.name)));
        }
        if !(self.mfu > 0.0 && self.mfu <= 1.0) {
            return Err(SimError::InvalidHardware(format!("{}: mfu must lie in (0, 1]", self.name)));
        }
        Ok(())
    }

    /// Sustained operations/second after the `mfu` derating.
    pub fn effective_flops(&self) -> f64 {
        self.peak_flops * self.mfu
    }

    pub fn ridge_point(&self) -> f64 {
        ridge_point(self)
    }

    pub fn roofline_time(&self, flops: f64, bytes: f64) -> f64 {
        roofline_time(flops, bytes, self)
    }
}

/// Arithmetic intensity (op/byte) at which the device turns compute-bound.
pub fn ridge_point(spec: &AcceleratorSpec) -> f64 {
    spec.effective_flops() / spec.mem_bw
}

/// Roofline execution time: the slower of the compute and memory terms.
pub fn roofline_time(flops: f64, bytes: f64, spec: &AcceleratorSpec) -> f64 {
    debug_assert!(flops >= 0.0 && bytes >= 0.0);
    let compute = flops / spec.effective_flops();
    let memory = bytes / spec.mem_bw;
    compute.max(memory)
}

/// Two-tier interconnect: fully connected groups joined by a slower fabric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectSpec {
    /// Unidirectional bytes/second per device inside a group.
    pub intra_group_bw: f64,
    /// Unidirectional bytes/second per device between groups.
    pub inter_group_bw: f64,
    /// Devices per fully connected group.
    pub group_size: u32,
    /// Fixed seconds added per transfer phase.
    #[serde(default)]
    pub link_latency: f64,
}

impl InterconnectSpec {
    pub fn new(intra_group_bw: f64, inter_group_bw: f64, group_size: u32) -> Result<Self> {
        let spec = Self {
            intra_group_bw,
            inter_group_bw,
            group_size,
            link_latency: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_latency(mut self, seconds: f64) -> Result<Self> {
        self.link_latency = seconds;
        self.validate()?;
        Ok(self)
    }

    /// NVLink 5 groups (900 GB/s) bridged by InfiniBand XDR (100 GB/s).
    pub fn nvlink5(group_size: u32) -> Self {
        Self {
            intra_group_bw: 900.0 * GIGA,
            inter_group_bw: 100.0 * GIGA,
            group_size,
            link_latency: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inter_group_bw >= 0.0 && self.inter_group_bw.is_finite()) {
            return Err(SimError::InvalidHardware("inter_group_bw must be >= 0".into()));
        }
        if !(self.intra_group_bw > 0.0 && self.intra_group_bw.is_finite()) {
            return Err(SimError::InvalidHardware("intra_group_bw must be > 0".into()));
        }
        if self.intra_group_bw < self.inter_group_bw {
            return Err(SimError::InvalidHardware(
                "intra_group_bw must be >= inter_group_bw".into(),
            ));
        }
        if self.group_size == 0 {
            return Err(SimError::InvalidHardware("group_size must be >= 1".into()));
        }
        if !(self.link_latency >= 0.0 && self.link_latency.is_finite()) {
            return Err(SimError::InvalidHardware("link_latency must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy of this interconnect with every link bandwidth multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            intra_group_bw: self.intra_group_bw * factor,
            inter_group_bw: self.inter_group_bw * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub accelerator: AcceleratorSpec,
    pub n_acc: u32,
    pub interconnect: InterconnectSpec,
}

impl SystemSpec {
    pub fn new(accelerator: AcceleratorSpec, n_acc: u32, interconnect: InterconnectSpec) -> Result<Self> {
        let sys = Self {
            accelerator,
            n_acc,
            interconnect,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        self.accelerator.validate()?;
        self.interconnect.validate()?;
        if self.n_acc == 0 {
            return Err(SimError::InvalidHardware("n_acc must be >= 1".into()));
        }
        if self.n_acc % self.interconnect.group_size != 0 {
            return Err(SimError::InvalidHardware(format!(
                "n_acc ({}) must be a multiple of group_size ({})",
                self.n_acc, self.interconnect.group_size
            )));
        }
        Ok(())
    }

    /// `n` B200s in a single NVLink group.
    pub fn b200_nvlink(n: u32) -> Self {
        Self {
            accelerator: accelerator_preset("b200").expect("built-in preset"),
            n_acc: n,
            interconnect: InterconnectSpec::nvlink5(n),
        }
    }
}

/// (preset key, display name, BF16 TFLOPS, GB/s, GB)
const ACCELERATOR_TABLE: &[(&str, &str, f64, f64, f64)] = &[
    ("v100", "V100 SXM2", 125.0, 900.0, 32.0),
    ("a100", "A100 SXM4", 312.0, 2039.0, 80.0),
    ("h200", "H200 SXM5", 989.5, 4800.0, 141.0),
    ("b200", "B200 SXM6", 2250.0, 8000.0, 192.0),
    ("tpu-v5p", "TPU v5p", 459.0, 2765.0, 95.0),
    ("tpu-v7", "TPU v7", 2307.0, 7400.0, 192.0),
    ("mi325x", "MI325X", 1307.4, 6000.0, 256.0),
];

pub fn accelerator_preset_names() -> Vec<&'static str> {
    ACCELERATOR_TABLE.iter().map(|row| row.0).collect()
}

pub fn accelerator_preset(name: &str) -> Result<AcceleratorSpec> {
    let key = name.to_ascii_lowercase().replace('_', "-");
    ACCELERATOR_TABLE
        .iter()
        .find(|row| row.0 == key)
        .map(|&(_, display, tflops, bw, cap)| {
            AcceleratorSpec::from_datasheet(display, tflops, bw, cap).expect("preset values are positive")
        })
        .ok_or_else(|| SimError::UnknownPreset(name.to_string()))
}
