//! Acceptance criteria. Each prints one PASS/FAIL line; the process fails if any fails.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use infersim::engine::{attention_breakdown, decode_tpot, prefill_time, ActivationModel};
use infersim::hw::{accelerator_preset, SystemSpec};
use infersim::layer_cost::{find, mla_block_cost, LayerClass, LayerLabel, Phase};
use infersim::limits::{b_cap, b_rp, b_slo, tpot_min};
use infersim::model::{deepseek_r1, gpt3, FfnVariant, ModelSpec};
use infersim::oracle::{count_dims, count_mismatch, equivalence_error, random_small_dims, Path, TinyMlaWeights, TinyState};
use infersim::parallelism::{DeploymentPlan, Stage};
use infersim::report::{compare_topologies, geometric_batches, topology_plans};
use infersim::config::{Format, SweepConfig};

type Outcome = (bool, String);

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn single() -> DeploymentPlan {
    DeploymentPlan::data_parallel(SystemSpec::b200_nvlink(1))
}

fn dp32() -> DeploymentPlan {
    DeploymentPlan::data_parallel(SystemSpec::b200_nvlink(32))
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let (ok, detail) = f();
    let el = t.elapsed();
    (ok && el < limit, format!("{detail}; {:.3}s (limit {}s)", el.as_secs_f64(), limit.as_secs()))
}

fn ridge_points() -> Outcome {
    let table = [
        ("v100", 138.89),
        ("a100", 153.02),
        ("h200", 206.15),
        ("b200", 281.25),
        ("tpu-v5p", 166.0),
        ("tpu-v7", 320.42),
        ("mi325x", 217.9),
    ];
    let mut bad = Vec::new();
    for (name, expect) in table {
        let rp = accelerator_preset(name).unwrap().ridge_point();
        let got = (rp * 100.0).round() / 100.0;
        if (got - expect).abs() > 1e-9 {
            bad.push(format!("{name} {got:.2} != {expect:.2}"));
        }
    }
    (bad.is_empty(), if bad.is_empty() { "7/7 match".into() } else { format!("mismatch: {}", bad.join(", ")) })
}

fn ai_cells() -> Outcome {
    let m = deepseek_r1();
    let ai = |phase: Phase, b: u64, reorder: bool, label: LayerLabel| {
        let layers = mla_block_cost(&m, phase, reorder, false, b, 128).unwrap();
        find(&layers, label).unwrap().ai()
    };
    let pre = Phase::Prefill { l_in: 8192 };
    let dec = Phase::Decode { l: 8192 };
    let cells = [
        ("prefill k_decompress without", ai(pre, 1, false, LayerLabel::KDecompress), 512.0),
        ("prefill k_decompress with", ai(pre, 1, true, LayerLabel::KDecompress), 100.0),
        ("prefill score without", ai(pre, 1, false, LayerLabel::Score), 128.0),
        ("prefill score with", ai(pre, 1, true, LayerLabel::Score), 512.0),
        ("decode k_decompress without", ai(dec, 1024, false, LayerLabel::KDecompress), 512.0),
        ("decode k_decompress with", ai(dec, 1024, true, LayerLabel::KDecompress), 128.0),
        ("decode score without", ai(dec, 1024, false, LayerLabel::Score), 1.0),
        ("decode score with", ai(dec, 1024, true, LayerLabel::Score), 100.0),
    ];
    let ok = cells.iter().all(|c| rel(c.1, c.2) <= 0.15);
    let detail = cells
        .iter()
        .map(|c| format!("{} {:.1}/{}", c.0, c.1, c.2))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, detail)
}

fn kv_bytes() -> Outcome {
    let g = gpt3().kv_bytes_per_token();
    let d = deepseek_r1().kv_bytes_per_token();
    (g == 9 * 1024 * 1024 / 2 && d == 70272, format!("gpt-3 {g} B, deepseek-r1 {d} B"))
}

fn oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(1000 + seed);
        let dims = random_small_dims(&mut rng);
        let l = rng.gen_range(1..=16);
        let ell = if seed % 2 == 0 { 1 } else { rng.gen_range(1..=l) };
        let w = TinyMlaWeights::random(dims, seed);
        let state = TinyState::random(dims, l, ell, &w, seed);
        worst = worst.max(equivalence_error(&state, &w));
    }
    let mut count_worst = 0.0f64;
    for path in [Path::Naive, Path::Reordered] {
        for ell in [1, 64] {
            count_worst = count_worst.max(count_mismatch(path, count_dims(), 64, ell).0);
        }
    }
    (
        worst <= 1e-9 && count_worst <= 0.1,
        format!("equivalence {worst:.2e}, count error {count_worst:.4}"),
    )
}

fn ridge_batches() -> Outcome {
    let m = deepseek_r1();
    let (_, b_moe, _) = b_rp(&m, &dp32());
    let mut bad = Vec::new();
    for dp in [1u32, 2, 3, 4, 8, 16, 32, 64] {
        let plan = DeploymentPlan::data_parallel(SystemSpec::b200_nvlink(dp));
        let (b_attn, _, _) = b_rp(&m, &plan);
        // 281.25 * dp = 1125 * dp / 4, rounded up.
        let exact = (1125 * dp as u64).div_ceil(4);
        if b_attn != exact {
            bad.push(format!("dp {dp}: {b_attn} != {exact}"));
        }
    }
    (b_moe == 9000 && bad.is_empty(), format!("b_moe {b_moe}; b_attn {}", if bad.is_empty() { "exact".into() } else { bad.join(", ") }))
}

fn capacity() -> Outcome {
    let ds = b_cap(&deepseek_r1(), &dp32(), 8192);
    let gpt_plan = DeploymentPlan::new(SystemSpec::b200_nvlink(32), 8, 4);
    let g = b_cap(&gpt3(), &gpt_plan, 8192);
    let mut no_act = dp32();
    no_act.activation = ActivationModel::None;
    let ds_no_act = b_cap(&deepseek_r1(), &no_act, 8192);
    (
        rel(ds as f64, 7360.0) <= 0.15 && rel(g as f64, 124.0) <= 0.25,
        format!("deepseek-r1 {ds} (7360), gpt-3 {g} (124); deepseek-r1 without activations {ds_no_act}"),
    )
}

fn reordering() -> Outcome {
    let m = deepseek_r1();
    let mut best = (0.0f64, 0, 0);
    for b in [1u64, 4, 16, 64, 128, 256] {
        for l in [512u64, 1024, 2048, 4096, 8192] {
            let off = decode_tpot(&m, &single().with_reorder(false), b, l).unwrap().attn_block_time;
            let on = decode_tpot(&m, &single(), b, l).unwrap().attn_block_time;
            if off / on > best.0 {
                best = (off / on, b, l);
            }
        }
    }
    let pre = single().for_stage(Stage::Prefill);
    let off = prefill_time(&m, &pre, 1, 4096).unwrap().attn_block_time;
    let on = prefill_time(&m, &pre.clone().with_reorder(true), 1, 4096).unwrap().attn_block_time;
    let ratio = on / off;
    (
        best.0 >= 50.0 && rel(ratio, 2.02) <= 0.2,
        format!(
            "decode speedup {:.1}x at B={} L={}; prefill slowdown {ratio:.2}x",
            best.0, best.1, best.2
        ),
    )
}

fn breakdown_shares() -> Outcome {
    let e = attention_breakdown(&deepseek_r1(), &single().with_reorder(false), 128, Phase::Decode { l: 4096 }).unwrap();
    let share = |c| e.iter().filter(|x| x.class == c).map(|x| x.fraction).sum::<f64>();
    let (dec, core) = (share(LayerClass::KvDecompress), share(LayerClass::CoreAttention));
    (
        dec + core >= 0.9 && dec > core && (dec - 0.59).abs() <= 0.10 && (core - 0.40).abs() <= 0.10,
        format!("kv decompression {:.1}%, core attention {:.1}%", dec * 100.0, core * 100.0),
    )
}

fn with_ffn(m: &ModelSpec, d: u64) -> ModelSpec {
    let mut m = m.clone();
    if let FfnVariant::Moe { d_moe, .. } = &mut m.ffn {
        *d_moe = d;
    }
    m
}

fn properties() -> Outcome {
    let mut fails = Vec::new();
    let ds = deepseek_r1();
    let g = gpt3();

    // Core-attention intensity does not depend on batch.
    for (m, reorder) in [(&ds, false), (&ds, true)] {
        let ai = |b| {
            let l = mla_block_cost(m, Phase::Decode { l: 4096 }, reorder, false, b, 128).unwrap();
            find(&l, LayerLabel::Score).unwrap().ai()
        };
        if rel(ai(1), ai(512)) > 1e-12 {
            fails.push("batch invariance of core-attention a.i.");
        }
    }

    // Reordered core attention time is flat in deg_TP when memory bound.
    let core = |tp: u32| {
        let p = DeploymentPlan::new(SystemSpec::b200_nvlink(tp), tp, 1);
        decode_tpot(&ds, &p, 16, 65536).unwrap().class_time(LayerClass::CoreAttention)
    };
    let base = core(1);
    if [2, 4, 8].iter().any(|&tp| rel(core(tp), base) > 0.1) {
        fails.push("tp invariance of reordered core attention");
    }

    // b_moe ignores the plan.
    let moe: Vec<u64> = [(1u32, 1u32, 1u32), (32, 1, 32), (32, 4, 8), (64, 2, 32)]
        .iter()
        .map(|&(n, tp, dp)| b_rp(&ds, &DeploymentPlan::new(SystemSpec::b200_nvlink(n), tp, dp)).1)
        .collect();
    if moe.iter().any(|&b| b != moe[0]) {
        fails.push("plan invariance of b_moe");
    }

    // Heavier MoE weights shrink both limits; a smaller cache grows them.
    let p = dp32();
    let slo = 0.1;
    let heavy = with_ffn(&ds, 4096);
    if b_cap(&heavy, &p, 4096) > b_cap(&ds, &p, 4096) || b_slo(&heavy, &p, 4096, slo) > b_slo(&ds, &p, 4096, slo) {
        fails.push("moe weight direction");
    }
    let mut small_kv = ds.clone();
    if let infersim::model::AttentionVariant::Mla { d_kvco, .. } = &mut small_kv.attention {
        *d_kvco = 256;
    }
    if b_cap(&small_kv, &p, 4096) < b_cap(&ds, &p, 4096) || b_slo(&small_kv, &p, 4096, slo) < b_slo(&ds, &p, 4096, slo) {
        fails.push("kv cache direction");
    }

    // TPOT nondecreasing in B and L.
    let gp = DeploymentPlan::new(SystemSpec::b200_nvlink(32), 8, 4);
    for (m, plan) in [(&ds, &p), (&g, &gp)] {
        let mut prev = 0.0;
        for b in geometric_batches(1, 20000) {
            let t = decode_tpot(m, plan, b, 2048).unwrap().tpot;
            if t < prev {
                fails.push("tpot monotone in B");
                break;
            }
            prev = t;
        }
        let mut prev = 0.0;
        for l in geometric_batches(1, 1 << 17) {
            let t = decode_tpot(m, plan, 64, l).unwrap().tpot;
            if t < prev {
                fails.push("tpot monotone in L");
                break;
            }
            prev = t;
        }
    }

    // Limits shrink with L; the SLO batch is tight.
    let mut prev = (u64::MAX, u64::MAX);
    for l in geometric_batches(256, 1 << 17) {
        let cur = (b_cap(&ds, &p, l), b_slo(&ds, &p, l, slo));
        if cur.0 > prev.0 || cur.1 > prev.1 {
            fails.push("limits nonincreasing in L");
            break;
        }
        prev = cur;
        let b = cur.1;
        if b > 0 && !(tpot_min(&ds, &p, b, l) <= slo && tpot_min(&ds, &p, b + 1, l) > slo) {
            fails.push("b_slo tightness");
            break;
        }
    }
    (fails.is_empty(), if fails.is_empty() { "all properties hold".into() } else { fails.join(", ") })
}

fn topology() -> Outcome {
    let hw = accelerator_preset("b200").unwrap();
    let cfg = SweepConfig {
        model: deepseek_r1(),
        plans: topology_plans(&hw),
        batch_sizes: geometric_batches(32, 1 << 20),
        seq_lens: vec![2048, 16384],
        slo: None,
        out: None,
        format: Format::Csv,
    };
    let peaks = compare_topologies(&cfg, None).unwrap();
    let get = |plan: &str, l: u64| {
        peaks
            .iter()
            .find(|p| p.plan == plan && p.seq_len == l)
            .unwrap()
            .throughput_tok_s
    };
    let (a, b) = (get("32gpu_x8", 2048), get("256gpu_900gbps", 2048));
    let (c, d) = (get("32gpu_x8", 16384), get("256gpu_300gbps", 16384));
    (
        rel(a, b) <= 0.1 && d > c,
        format!("L=2048: {a:.0} vs {b:.0} tok/s; L=16384: 32x8 {c:.0} vs 256@300 {d:.0} tok/s"),
    )
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("ridge points", Box::new(|| timed(Duration::from_secs(1), ridge_points))),
        ("attention a.i. cells", Box::new(|| timed(Duration::from_secs(1), ai_cells))),
        ("kv bytes per token", Box::new(kv_bytes)),
        ("oracle equivalence and counts", Box::new(|| timed(Duration::from_secs(10), oracle))),
        ("ridge-point batches", Box::new(ridge_batches)),
        ("capacity batch", Box::new(capacity)),
        ("reordering effects", Box::new(reordering)),
        ("breakdown shares", Box::new(breakdown_shares)),
        ("property suite", Box::new(|| timed(Duration::from_secs(30), properties))),
        ("topology direction", Box::new(topology)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = f();
        println!("{} criterion {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
        if !ok {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
