use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infersim::config::{Format, Overrides, RawConfig, SweepConfig};
use infersim::engine::{attention_breakdown, run_phase};
use infersim::hw::{accelerator_preset, accelerator_preset_names};
use infersim::layer_cost::Phase;
use infersim::limits::batch_limits;
use infersim::model::{model_preset, model_preset_names};
use infersim::oracle::verify_suite;
use infersim::parallelism::Stage;
use infersim::report::{peak_throughput, run_sweep, write_records};
use infersim::SimError;

#[derive(Parser)]
#[command(name = "infersim", version, about = "Roofline simulator for LLM inference serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every (plan, seq_len, batch) point of a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Report only the peak feasible throughput per plan and seq_len.
        #[arg(long)]
        peak: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Per-layer time shares at one (batch, seq_len) point.
    Breakdown {
        #[command(flatten)]
        common: Common,
        /// Shares within one attention block instead of the whole step.
        #[arg(long)]
        attention_only: bool,
    },
    /// Ridge-point, capacity and SLO batch limits as JSON.
    Limits {
        #[command(flatten)]
        common: Common,
    },
    /// Run the MLA reordering equivalence and count checks.
    Verify,
    /// List built-in hardware and model presets.
    Presets,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hardware: Option<String>,
    #[arg(long)]
    n_acc: Option<u32>,
    #[arg(long)]
    tp: Option<u32>,
    #[arg(long)]
    dp: Option<u32>,
    /// prefill or decode
    #[arg(long)]
    stage: Option<Stage>,
    #[arg(long)]
    reorder: Option<bool>,
    #[arg(long)]
    fused: Option<bool>,
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',')]
    batch: Option<Vec<u64>>,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',')]
    seq_len: Option<Vec<u64>>,
    #[arg(long)]
    slo_ms: Option<f64>,
    #[arg(long)]
    out: Option<String>,
    /// csv or json
    #[arg(long)]
    format: Option<Format>,
}

impl Common {
    fn resolve(&self) -> infersim::Result<SweepConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        Overrides {
            model: self.model.clone(),
            hardware: self.hardware.clone(),
            n_acc: self.n_acc,
            deg_tp: self.tp,
            deg_dp: self.dp,
            stage: self.stage,
            reorder: self.reorder,
            fused: self.fused,
            batch_sizes: self.batch.clone(),
            seq_lens: self.seq_len.clone(),
            slo_ms: self.slo_ms,
            out: self.out.clone(),
            format: self.format,
        }
        .apply(&mut raw);
        SweepConfig::from_raw(&raw)
    }
}

fn output(path: &Option<String>) -> infersim::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn single_point(cfg: &SweepConfig) -> infersim::Result<(u64, u64)> {
    match (cfg.batch_sizes.as_slice(), cfg.seq_lens.as_slice()) {
        ([b], [l]) => Ok((*b, *l)),
        _ => Err(SimError::InvalidArgument(
            "breakdown needs exactly one --batch and one --seq-len".into(),
        )),
    }
}

fn run(cli: Cli) -> infersim::Result<ExitCode> {
    match cli.command {
        Command::Presets => {
            let mut out = io::stdout().lock();
            writeln!(out, "hardware:")?;
            for name in accelerator_preset_names() {
                let hw = accelerator_preset(name)?;
                writeln!(
                    out,
                    "  {name:<8} {:>7} TFLOPS {:>6} GB/s {:>4} GB  ridge {:.2}",
                    hw.peak_flops / 1e12,
                    hw.mem_bw / 1e9,
                    hw.mem_cap / 1e9,
                    hw.ridge_point()
                )?;
            }
            writeln!(out, "models:")?;
            for name in model_preset_names() {
                let m = model_preset(name)?;
                writeln!(
                    out,
                    "  {name:<12} {} blocks, {} attention, {:.1} GB weights",
                    m.n_dec,
                    m.attention.name(),
                    m.total_weight_bytes() as f64 / 1e9
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let checks = verify_suite();
            let mut out = io::stdout().lock();
            let mut ok = true;
            for c in &checks {
                writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
                ok &= c.passed;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { common, peak, jobs } => {
            let cfg = common.resolve()?;
            let records = run_sweep(&cfg, jobs)?;
            let mut out = output(&cfg.out)?;
            if peak {
                let peaks = peak_throughput(&records);
                serde_json::to_writer_pretty(&mut out, &peaks)?;
                writeln!(out)?;
            } else {
                write_records(&records, cfg.format, &mut out)?;
            }
            out.flush()?;
            if records.iter().all(|r| !r.feasible) {
                eprintln!("every grid point is infeasible");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Breakdown { common, attention_only } => {
            let cfg = common.resolve()?;
            let (b, l) = single_point(&cfg)?;
            let mut out = output(&cfg.out)?;
            for np in &cfg.plans {
                let phase = match np.plan.stage {
                    Stage::Decode => Phase::Decode { l },
                    Stage::Prefill => Phase::Prefill { l_in: l },
                };
                let entries = if attention_only {
                    attention_breakdown(&cfg.model, &np.plan, b, phase)?
                } else {
                    run_phase(&cfg.model, &np.plan, b, phase)?.breakdown
                };
                let doc = serde_json::json!({ "plan": np.id, "batch": b, "seq_len": l, "layers": entries });
                serde_json::to_writer_pretty(&mut out, &doc)?;
                writeln!(out)?;
            }
            out.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Limits { common } => {
            let cfg = common.resolve()?;
            let mut out = output(&cfg.out)?;
            for np in &cfg.plans {
                for &l in &cfg.seq_lens {
                    let lim = batch_limits(&cfg.model, &np.plan, l, cfg.slo)?;
                    let doc = serde_json::json!({ "plan": np.id, "seq_len": l, "limits": lim });
                    serde_json::to_writer(&mut out, &doc)?;
                    writeln!(out)?;
                }
            }
            out.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
