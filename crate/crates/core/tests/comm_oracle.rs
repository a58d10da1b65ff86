use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use infersim::comm::{moe_dispatch_combine, tp_allreduce};
use infersim::hw::{InterconnectSpec, SystemSpec};
use infersim::model::{deepseek_r1, FfnVariant};
use infersim::parallelism::DeploymentPlan;

fn plan(n: u32, group: u32) -> DeploymentPlan {
    let mut sys = SystemSpec::b200_nvlink(n);
    sys.interconnect = InterconnectSpec::nvlink5(group);
    DeploymentPlan::data_parallel(sys)
}

/// Bytes device 0 sends over (intra, inter) links when each of its tokens goes
/// to `dest(token, k)`, counting dispatch and combine.
fn count_sends(g: usize, tokens_per_dev: usize, n_k: usize, payload: f64, mut dest: impl FnMut(usize, usize) -> usize) -> (f64, f64) {
    let (mut intra, mut inter) = (0.0, 0.0);
    for t in 0..tokens_per_dev {
        for k in 0..n_k {
            let d = dest(t, k);
            if d == 0 {
                continue;
            }
            if d / g == 0 {
                intra += 2.0 * payload;
            } else {
                inter += 2.0 * payload;
            }
        }
    }
    (intra, inter)
}

#[test]
fn balanced_routing_matches_closed_form_exactly() {
    let m = deepseek_r1();
    let FfnVariant::Moe { n_k, .. } = m.ffn else { unreachable!() };
    let (n, g, per_dev) = (16usize, 4usize, 64usize);
    let payload = (m.d_emb * m.dtype_bytes) as f64;
    let mut next = 0usize;
    let (intra, inter) = count_sends(g, per_dev, n_k as usize, payload, |_, _| {
        next += 1;
        (next - 1) % n
    });
    let c = moe_dispatch_combine((n * per_dev) as u64, &plan(n as u32, g as u32), &m);
    assert_eq!(c.bytes_intra, intra);
    assert_eq!(c.bytes_inter, inter);
}

#[test]
fn random_routing_converges_to_closed_form() {
    let m = deepseek_r1();
    let FfnVariant::Moe { n_k, .. } = m.ffn else { unreachable!() };
    let (n, g, per_dev) = (32usize, 8usize, 4096usize);
    let payload = (m.d_emb * m.dtype_bytes) as f64;
    let mut rng = StdRng::seed_from_u64(11);
    let (intra, inter) = count_sends(g, per_dev, n_k as usize, payload, |_, _| rng.gen_range(0..n));
    let c = moe_dispatch_combine((n * per_dev) as u64, &plan(n as u32, g as u32), &m);
    assert!((intra / c.bytes_intra - 1.0).abs() < 0.05, "{intra} vs {}", c.bytes_intra);
    assert!((inter / c.bytes_inter - 1.0).abs() < 0.02, "{inter} vs {}", c.bytes_inter);
}

/// Ring reduce-scatter then all-gather on real data; returns bytes sent by rank 0.
fn ring_allreduce(bufs: &mut [Vec<f64>], elem_bytes: f64) -> f64 {
    let p = bufs.len();
    let len = bufs[0].len();
    assert_eq!(len % p, 0);
    let chunk = len / p;
    let mut sent0 = 0.0;
    for step in 0..p - 1 {
        let snapshot = bufs.to_vec();
        for r in 0..p {
            let c = (r + p - step) % p;
            let to = (r + 1) % p;
            for i in c * chunk..(c + 1) * chunk {
                bufs[to][i] += snapshot[r][i];
            }
            if r == 0 {
                sent0 += chunk as f64 * elem_bytes;
            }
        }
    }
    for step in 0..p - 1 {
        let snapshot = bufs.to_vec();
        for r in 0..p {
            let c = (r + 1 + p - step) % p;
            let to = (r + 1) % p;
            for i in c * chunk..(c + 1) * chunk {
                bufs[to][i] = snapshot[r][i];
            }
            if r == 0 {
                sent0 += chunk as f64 * elem_bytes;
            }
        }
    }
    sent0
}

#[test]
fn ring_simulation_matches_allreduce_volume() {
    let (p, rows, d_emb, dt) = (8usize, 128usize, 7168usize, 2.0);
    let mut rng = StdRng::seed_from_u64(5);
    let mut bufs: Vec<Vec<f64>> = (0..p).map(|_| (0..rows * d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let expect: Vec<f64> = (0..rows * d_emb).map(|i| bufs.iter().map(|b| b[i]).sum()).collect();
    let sent = ring_allreduce(&mut bufs, dt);
    for b in &bufs {
        for (x, y) in b.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-9);
        }
    }
    let plan = DeploymentPlan::new(SystemSpec::b200_nvlink(p as u32), p as u32, 1);
    let c = tp_allreduce(rows as u64, &plan, d_emb as f64 * dt);
    assert_eq!(c.bytes_intra, sent);
    assert_eq!(c.bytes_inter, 0.0);
}
