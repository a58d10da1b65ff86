//! Dense small-scale MLA in f64, computed both as written and reordered.
//!
//! Every matrix product records its multiply-adds and the elements it reads and
//! writes under a [`LayerLabel`], so the closed-form costs can be checked
//! against an actual execution.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::layer_cost::{mla_block_cost, LayerLabel, Phase};
use crate::model::{AttentionVariant, FfnVariant, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn random(rows: usize, cols: usize, rng: &mut StdRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Columns `[start, start + width)`.
    pub fn cols_slice(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            for c in 0..width {
                out.set(r, c, self.get(r, start + c));
            }
        }
        out
    }

    /// Rows `[start, start + height)`.
    pub fn rows_slice(&self, start: usize, height: usize) -> Matrix {
        Matrix {
            rows: height,
            cols: self.cols,
            data: self.data[start * self.cols..(start + height) * self.cols].to_vec(),
        }
    }

    pub fn hcat(parts: &[&Matrix]) -> Matrix {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            assert_eq!(p.rows, rows);
            for r in 0..rows {
                for c in 0..p.cols {
                    out.set(r, off + c, p.get(r, c));
                }
            }
            off += p.cols;
        }
        out
    }

    pub fn vcat(parts: &[Matrix]) -> Matrix {
        let cols = parts[0].cols;
        let mut data = Vec::new();
        for p in parts {
            assert_eq!(p.cols, cols);
            data.extend_from_slice(&p.data);
        }
        Matrix {
            rows: data.len() / cols,
            cols,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn mul_into(&self, b: &Matrix, c: &mut Matrix) {
        assert_eq!(self.cols, b.rows, "inner dimensions");
        assert_eq!((c.rows, c.cols), (self.rows, b.cols));
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..b.cols {
                    c.data[i * c.cols + j] += a * b.get(k, j);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Count {
    pub flops: f64,
    /// Matrix elements read or written in main memory.
    pub elems: f64,
}

/// Per-label operation and traffic tally.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counter {
    pub by_label: BTreeMap<LayerLabel, Count>,
}

impl Counter {
    fn add(&mut self, label: LayerLabel, flops: f64, elems: f64) {
        let e = self.by_label.entry(label).or_default();
        e.flops += flops;
        e.elems += elems;
    }

    pub fn get(&self, label: LayerLabel) -> Count {
        self.by_label.get(&label).copied().unwrap_or_default()
    }
}

/// Which operands of a product touch main memory. An operand that is
/// produced or consumed on chip by a neighbouring product is not counted.
#[derive(Clone, Copy)]
struct Touch {
    read_a: bool,
    write_c: bool,
}

const MEM: Touch = Touch {
    read_a: true,
    write_c: true,
};

fn matmul(label: LayerLabel, a: &Matrix, b: &Matrix, touch: Touch, ctr: &mut Counter) -> Matrix {
    let mut c = Matrix::zeros(a.rows, b.cols);
    a.mul_into(b, &mut c);
    let (m, k, n) = (a.rows as f64, a.cols as f64, b.cols as f64);
    let elems = k * n + if touch.read_a { m * k } else { 0.0 } + if touch.write_c { m * n } else { 0.0 };
    ctr.add(label, 2.0 * m * k * n, elems);
    c
}

/// `c += a * b`, reading and rewriting `c`.
fn matmul_acc(label: LayerLabel, a: &Matrix, b: &Matrix, c: &mut Matrix, ctr: &mut Counter) {
    a.mul_into(b, c);
    let (m, k, n) = (a.rows as f64, a.cols as f64, b.cols as f64);
    ctr.add(label, 2.0 * m * k * n, m * k + k * n + 2.0 * m * n);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyDims {
    pub n_hd: usize,
    pub d_hd: usize,
    pub d_emb: usize,
    pub d_qco: usize,
    pub d_kvco: usize,
    /// Must be even (rotated in pairs).
    pub d_rope: usize,
}

impl TinyDims {
    /// An MLA model spec with these dimensions, for comparing against closed forms.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            name: "tiny-mla".into(),
            n_dec: 1,
            d_emb: self.d_emb as u64,
            n_hd: self.n_hd as u64,
            d_hd: self.d_hd as u64,
            attention: AttentionVariant::Mla {
                d_qco: self.d_qco as u64,
                d_kvco: self.d_kvco as u64,
                d_rope: self.d_rope as u64,
            },
            ffn: FfnVariant::Dense {
                d_ffn: self.d_emb as u64,
                gated: true,
            },
            dtype_bytes: 2,
        }
    }
}

/// MLA weights. Per-head matrices are stored side by side: head `i` owns
/// columns `[i*d_hd, (i+1)*d_hd)` of `w_dq`, `w_dk`, `w_dv` and
/// `[i*d_rope, (i+1)*d_rope)` of `w_rq`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlaWeights {
    pub dims: TinyDims,
    pub w_cq: Matrix,
    pub w_ckv: Matrix,
    pub w_rk: Matrix,
    pub w_rq: Matrix,
    pub w_dq: Matrix,
    pub w_dk: Matrix,
    pub w_dv: Matrix,
}

impl TinyMlaWeights {
    pub fn zeros(d: TinyDims) -> Self {
        let dec = d.n_hd * d.d_hd;
        Self {
            dims: d,
            w_cq: Matrix::zeros(d.d_emb, d.d_qco),
            w_ckv: Matrix::zeros(d.d_emb, d.d_kvco),
            w_rk: Matrix::zeros(d.d_emb, d.d_rope),
            w_rq: Matrix::zeros(d.d_qco, d.n_hd * d.d_rope),
            w_dq: Matrix::zeros(d.d_qco, dec),
            w_dk: Matrix::zeros(d.d_kvco, dec),
            w_dv: Matrix::zeros(d.d_kvco, dec),
        }
    }

    pub fn random(d: TinyDims, seed: u64) -> Self {
        assert!(d.d_rope % 2 == 0, "d_rope must be even");
        let mut rng = StdRng::seed_from_u64(seed);
        let dec = d.n_hd * d.d_hd;
        Self {
            dims: d,
            w_cq: Matrix::random(d.d_emb, d.d_qco, &mut rng),
            w_ckv: Matrix::random(d.d_emb, d.d_kvco, &mut rng),
            w_rk: Matrix::random(d.d_emb, d.d_rope, &mut rng),
            w_rq: Matrix::random(d.d_qco, d.n_hd * d.d_rope, &mut rng),
            w_dq: Matrix::random(d.d_qco, dec, &mut rng),
            w_dk: Matrix::random(d.d_kvco, dec, &mut rng),
            w_dv: Matrix::random(d.d_kvco, dec, &mut rng),
        }
    }
}

/// Rotates consecutive column pairs of `m` by `pos * 10000^(-2k/width)`.
/// Row `r` sits at position `first_pos + r`.
pub fn rope(m: &Matrix, first_pos: usize) -> Matrix {
    let mut out = m.clone();
    let width = m.cols as f64;
    for r in 0..m.rows {
        let pos = (first_pos + r) as f64;
        for k in 0..m.cols / 2 {
            let theta = pos * 10000f64.powf(-2.0 * k as f64 / width);
            let (s, c) = theta.sin_cos();
            let (x, y) = (m.get(r, 2 * k), m.get(r, 2 * k + 1));
            out.set(r, 2 * k, x * c - y * s);
            out.set(r, 2 * k + 1, x * s + y * c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyState {
    /// All L hidden states; the last `ell` rows are the current queries.
    pub h: Matrix,
    pub ell: usize,
    /// Cached `[latent | rotated shared key]`, L x (d_kvco + d_rope).
    pub c_kv: Matrix,
}

impl TinyState {
    pub fn new(h: Matrix, ell: usize, w: &TinyMlaWeights) -> Self {
        assert!(ell >= 1 && ell <= h.rows, "need L >= ell >= 1");
        let mut scratch = Counter::default();
        let latent = matmul(LayerLabel::Fc, &h, &w.w_ckv, MEM, &mut scratch);
        let k_r = rope(&matmul(LayerLabel::Fc, &h, &w.w_rk, MEM, &mut scratch), 0);
        Self {
            c_kv: Matrix::hcat(&[&latent, &k_r]),
            h,
            ell,
        }
    }

    pub fn random(dims: TinyDims, l: usize, ell: usize, w: &TinyMlaWeights, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Self::new(Matrix::random(l, dims.d_emb, &mut rng), ell, w)
    }

    pub fn context_len(&self) -> usize {
        self.h.rows
    }

    fn first_query_pos(&self) -> usize {
        self.h.rows - self.ell
    }
}

/// Per-head raw scores (before scaling and masking) and context outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub s: Vec<Matrix>,
    pub o: Vec<Matrix>,
}

/// Query-side projections shared by both paths: (C_Q, rotated per-head RoPE queries).
fn query_side(state: &TinyState, w: &TinyMlaWeights, ctr: &mut Counter) -> (Matrix, Matrix) {
    let d = w.dims;
    let h_q = state.h.rows_slice(state.first_query_pos(), state.ell);
    let fused = Matrix::hcat(&[&w.w_cq, &w.w_ckv, &w.w_rk]);
    let a = matmul(LayerLabel::QkvCompress, &h_q, &fused, MEM, ctr);
    let c_q = a.cols_slice(0, d.d_qco);
    let q_r_raw = matmul(LayerLabel::QRope, &c_q, &w.w_rq, MEM, ctr);
    let mut q_r = Matrix::zeros(state.ell, d.n_hd * d.d_rope);
    for i in 0..d.n_hd {
        let head = rope(&q_r_raw.cols_slice(i * d.d_rope, d.d_rope), state.first_query_pos());
        for r in 0..state.ell {
            for c in 0..d.d_rope {
                q_r.set(r, i * d.d_rope + c, head.get(r, c));
            }
        }
    }
    (c_q, q_r)
}

/// Scales, applies the causal mask and normalizes each row.
fn softmax(s: &Matrix, state: &TinyState, scale: f64, ctr: &mut Counter) -> Matrix {
    let mut p = s.clone();
    let ell = state.ell;
    for r in 0..s.rows {
        let q_pos = state.first_query_pos() + r % ell;
        let mut max = f64::NEG_INFINITY;
        for c in 0..=q_pos {
            max = max.max(s.get(r, c) * scale);
        }
        let mut sum = 0.0;
        for c in 0..s.cols {
            let v = if c <= q_pos { (s.get(r, c) * scale - max).exp() } else { 0.0 };
            p.set(r, c, v);
            sum += v;
        }
        for c in 0..s.cols {
            p.set(r, c, p.get(r, c) / sum);
        }
    }
    ctr.add(LayerLabel::Softmax, 0.0, 2.0 * (s.rows * s.cols) as f64);
    p
}

fn score_scale(d: TinyDims) -> f64 {
    1.0 / ((d.d_hd + d.d_rope) as f64).sqrt()
}

/// MLA as written: decompress K and V for the whole context, then attend.
pub fn mla_naive(state: &TinyState, w: &TinyMlaWeights, ctr: &mut Counter) -> AttentionOutput {
    let d = w.dims;
    let l = state.context_len();
    let (c_q, q_r) = query_side(state, w, ctr);
    let q = matmul(LayerLabel::QDecompress, &c_q, &w.w_dq, MEM, ctr);
    let latent = state.c_kv.cols_slice(0, d.d_kvco);
    let k_r = state.c_kv.cols_slice(d.d_kvco, d.d_rope);
    let k = matmul(LayerLabel::KDecompress, &latent, &w.w_dk, MEM, ctr);
    let v = matmul(LayerLabel::VDecompress, &latent, &w.w_dv, MEM, ctr);
    // The shared RoPE key is copied into every head's K.
    ctr.add(LayerLabel::KRope, 0.0, (l * d.d_rope + d.n_hd * l * d.d_rope) as f64);
    let k_r_t = k_r.transpose();
    let mut out = AttentionOutput {
        s: Vec::new(),
        o: Vec::new(),
    };
    for i in 0..d.n_hd {
        let q_i = q.cols_slice(i * d.d_hd, d.d_hd);
        let k_i = k.cols_slice(i * d.d_hd, d.d_hd);
        let v_i = v.cols_slice(i * d.d_hd, d.d_hd);
        let mut s = matmul(LayerLabel::Score, &q_i, &k_i.transpose(), MEM, ctr);
        matmul_acc(LayerLabel::KRope, &q_r.cols_slice(i * d.d_rope, d.d_rope), &k_r_t, &mut s, ctr);
        let p = softmax(&s, state, score_scale(d), ctr);
        out.o.push(matmul(LayerLabel::Context, &p, &v_i, MEM, ctr));
        out.s.push(s);
    }
    out
}

/// Reordered MLA: fold `W_DK` into the query and `W_DV` into the output so
/// the cache is used in latent form. Heads are stacked row-wise against the
/// shared latent cache. With a single query row the per-head intermediates
/// between Q decompression and absorption, and between the latent context and
/// `W_DV`, stay on chip.
pub fn mla_reordered(state: &TinyState, w: &TinyMlaWeights, ctr: &mut Counter) -> AttentionOutput {
    let d = w.dims;
    let ell = state.ell;
    let chained = ell == 1;
    let (c_q, q_r) = query_side(state, w, ctr);
    let q = matmul(
        LayerLabel::QDecompress,
        &c_q,
        &w.w_dq,
        Touch {
            read_a: true,
            write_c: !chained,
        },
        ctr,
    );
    let mut q_abs = Vec::with_capacity(d.n_hd);
    let mut q_rope = Vec::with_capacity(d.n_hd);
    for i in 0..d.n_hd {
        let w_dk_t = w.w_dk.cols_slice(i * d.d_hd, d.d_hd).transpose();
        let touch = Touch {
            read_a: !chained,
            write_c: true,
        };
        q_abs.push(matmul(LayerLabel::KDecompress, &q.cols_slice(i * d.d_hd, d.d_hd), &w_dk_t, touch, ctr));
        q_rope.push(q_r.cols_slice(i * d.d_rope, d.d_rope));
    }
    let q_abs = Matrix::vcat(&q_abs);
    let q_rope = Matrix::vcat(&q_rope);
    let latent_t = state.c_kv.cols_slice(0, d.d_kvco).transpose();
    let k_r_t = state.c_kv.cols_slice(d.d_kvco, d.d_rope).transpose();
    let mut s = matmul(LayerLabel::Score, &q_abs, &latent_t, MEM, ctr);
    matmul_acc(LayerLabel::KRope, &q_rope, &k_r_t, &mut s, ctr);
    let p = softmax(&s, state, score_scale(d), ctr);
    let o_lat = matmul(
        LayerLabel::Context,
        &p,
        &latent_t.transpose(),
        Touch {
            read_a: true,
            write_c: !chained,
        },
        ctr,
    );
    let mut out = AttentionOutput {
        s: Vec::new(),
        o: Vec::new(),
    };
    for i in 0..d.n_hd {
        let w_dv_i = w.w_dv.cols_slice(i * d.d_hd, d.d_hd);
        let touch = Touch {
            read_a: !chained,
            write_c: true,
        };
        out.o.push(matmul(LayerLabel::VDecompress, &o_lat.rows_slice(i * ell, ell), &w_dv_i, touch, ctr));
        out.s.push(s.rows_slice(i * ell, ell));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    Naive,
    Reordered,
}

/// Counts of one execution on random data.
pub fn instrumented_counts(path: Path, dims: TinyDims, l: usize, ell: usize, seed: u64) -> Counter {
    let w = TinyMlaWeights::random(dims, seed);
    let state = TinyState::random(dims, l, ell, &w, seed);
    let mut ctr = Counter::default();
    match path {
        Path::Naive => mla_naive(&state, &w, &mut ctr),
        Path::Reordered => mla_reordered(&state, &w, &mut ctr),
    };
    ctr
}

/// Largest elementwise disagreement between the two paths, relative to `1 + max|value|`.
pub fn equivalence_error(state: &TinyState, w: &TinyMlaWeights) -> f64 {
    let mut c = Counter::default();
    let a = mla_naive(state, w, &mut c);
    let b = mla_reordered(state, w, &mut c);
    let mut worst = 0.0f64;
    for (x, y) in a.s.iter().zip(&b.s).chain(a.o.iter().zip(&b.o)) {
        let scale = 1.0 + x.max_abs().max(y.max_abs());
        worst = worst.max(x.max_abs_diff(y) / scale);
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Labels compared between the oracle and the closed forms.
pub const COMPARED_LABELS: [LayerLabel; 9] = [
    LayerLabel::QkvCompress,
    LayerLabel::QRope,
    LayerLabel::QDecompress,
    LayerLabel::KDecompress,
    LayerLabel::VDecompress,
    LayerLabel::Score,
    LayerLabel::KRope,
    LayerLabel::Softmax,
    LayerLabel::Context,
];

/// Worst relative error, over compared labels, between oracle counts and the
/// unfused closed-form costs for one request.
pub fn count_mismatch(path: Path, dims: TinyDims, l: usize, ell: usize) -> (f64, String) {
    let ctr = instrumented_counts(path, dims, l, ell, 7);
    let model = dims.model_spec();
    let phase = if ell == 1 {
        Phase::Decode { l: l as u64 }
    } else {
        assert_eq!(ell, l, "prefill counts need ell == L");
        Phase::Prefill { l_in: l as u64 }
    };
    let layers = mla_block_cost(&model, phase, path == Path::Reordered, false, 1, dims.n_hd as u64)
        .expect("tiny dims are valid MLA");
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let mut worst = (0.0, String::new());
    for label in COMPARED_LABELS {
        let c = ctr.get(label);
        let f = layers.iter().find(|x| x.label == label).expect("label present");
        for (what, err) in [
            ("flops", rel(c.flops, f.flops)),
            ("bytes", rel(c.elems * model.dtype_bytes as f64, f.bytes)),
        ] {
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{label} {what}"));
            }
        }
    }
    worst
}

/// Random dims no larger than 16, with even `d_rope`.
pub fn random_small_dims(rng: &mut StdRng) -> TinyDims {
    TinyDims {
        n_hd: rng.gen_range(1..=4),
        d_hd: rng.gen_range(1..=16),
        d_emb: rng.gen_range(1..=16),
        d_qco: rng.gen_range(1..=16),
        d_kvco: rng.gen_range(1..=16),
        d_rope: 2 * rng.gen_range(1..=8),
    }
}

/// The full verification suite: equivalence over 100 seeds and count agreement.
pub fn verify_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let dims = random_small_dims(&mut rng);
        let l = rng.gen_range(1..=16);
        let ell = if rng.gen_bool(0.5) { 1 } else { rng.gen_range(1..=l) };
        let w = TinyMlaWeights::random(dims, seed);
        let state = TinyState::random(dims, l, ell, &w, seed);
        worst = worst.max(equivalence_error(&state, &w));
    }
    out.push(CheckResult {
        name: "reorder_equivalence".into(),
        passed: worst <= 1e-9,
        detail: format!("100 instances, worst relative error {worst:.3e}"),
    });
    let dims = count_dims();
    for (path, ell) in [(Path::Naive, 1), (Path::Reordered, 1), (Path::Naive, 64), (Path::Reordered, 64)] {
        let (err, at) = count_mismatch(path, dims, 64, ell);
        out.push(CheckResult {
            name: format!("counts_{:?}_ell{ell}", path).to_lowercase(),
            passed: err <= 0.1,
            detail: format!("worst relative error {err:.4} at {at}"),
        });
    }
    let naive = instrumented_counts(Path::Naive, dims, 64, 1, 3).get(LayerLabel::KDecompress).flops;
    let re = instrumented_counts(Path::Reordered, dims, 64, 1, 3).get(LayerLabel::KDecompress).flops;
    out.push(CheckResult {
        name: "k_decompress_ratio".into(),
        passed: naive == 64.0 * re,
        detail: format!("naive/reordered = {}", naive / re),
    });
    out
}

/// Dimensions used for the count comparison.
pub fn count_dims() -> TinyDims {
    TinyDims {
        n_hd: 2,
        d_hd: 64,
        d_emb: 64,
        d_qco: 64,
        d_kvco: 64,
        d_rope: 64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> TinyDims {
        TinyDims {
            n_hd: 2,
            d_hd: 3,
            d_emb: 5,
            d_qco: 4,
            d_kvco: 4,
            d_rope: 2,
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = TinyMlaWeights::zeros(dims());
        let mut rng = StdRng::seed_from_u64(1);
        let state = TinyState::new(Matrix::random(6, 5, &mut rng), 1, &w);
        let mut c = Counter::default();
        for out in [mla_naive(&state, &w, &mut c), mla_reordered(&state, &w, &mut c)] {
            assert!(out.s.iter().chain(&out.o).all(|m| m.max_abs() == 0.0));
        }
    }

    #[test]
    fn paths_agree() {
        for ell in [1, 3, 6] {
            let w = TinyMlaWeights::random(dims(), 11);
            let state = TinyState::random(dims(), 6, ell, &w, 11);
            assert!(equivalence_error(&state, &w) < 1e-12);
        }
    }

    #[test]
    fn naive_k_decompress_count() {
        let d = count_dims();
        let c = instrumented_counts(Path::Naive, d, 50, 1, 0);
        assert_eq!(c.get(LayerLabel::KDecompress).flops, (2 * 64 * 50 * 2 * 64) as f64);
        let a = instrumented_counts(Path::Reordered, d, 10, 1, 0);
        let b = instrumented_counts(Path::Reordered, d, 40, 1, 0);
        assert_eq!(a.get(LayerLabel::KDecompress), b.get(LayerLabel::KDecompress));
    }

    #[test]
    fn single_token_context() {
        // L = 1: naive and absorbed K-side products cost the same; the score
        // differs by d_kvco / d_hd.
        let d = TinyDims { d_kvco: 32, ..count_dims() };
        let n = instrumented_counts(Path::Naive, d, 1, 1, 0);
        let r = instrumented_counts(Path::Reordered, d, 1, 1, 0);
        assert_eq!(n.get(LayerLabel::KDecompress).flops, r.get(LayerLabel::KDecompress).flops);
        let ratio = r.get(LayerLabel::Score).flops / n.get(LayerLabel::Score).flops;
        assert_eq!(ratio, 32.0 / 64.0);
    }

    #[test]
    fn suite_is_green() {
        for check in verify_suite() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
