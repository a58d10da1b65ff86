//! Declarative transformer description and its byte/parameter accounting.
//!
//! Embedding and LM-head weights are not counted anywhere: every quantity here
//! is per decoder block or a sum of per-block terms.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttentionVariant {
    Mha,
    /// `group_size` query heads share one KV head.
    Gqa { group_size: u64 },
    /// Low-rank latent attention with decoupled RoPE.
    Mla { d_qco: u64, d_kvco: u64, d_rope: u64 },
}

impl AttentionVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AttentionVariant::Mha => "MHA",
            AttentionVariant::Gqa { .. } => "GQA",
            AttentionVariant::Mla { .. } => "MLA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FfnVariant {
    /// Dense FFN. `gated` selects three FC layers (gate/up/down) instead of two (up/down).
    Dense {
        d_ffn: u64,
        #[serde(default = "default_true")]
        gated: bool,
    },
    /// Routed + shared experts. The first `n_dense_blocks` decoder blocks use a
    /// gated dense FFN of width `d_dense_ffn` instead.
    Moe {
        n_e: u64,
        n_k: u64,
        n_shared: u64,
        d_moe: u64,
        #[serde(default)]
        n_dense_blocks: u64,
        #[serde(default)]
        d_dense_ffn: u64,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub n_dec: u64,
    pub d_emb: u64,
    pub n_hd: u64,
    pub d_hd: u64,
    pub attention: AttentionVariant,
    pub ffn: FfnVariant,
    #[serde(default = "default_dtype_bytes")]
    pub dtype_bytes: u64,
}

fn default_dtype_bytes() -> u64 {
    2
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::InvalidModel(format!("{}: {msg}", self.name)));
        for (field, v) in [
            ("n_dec", self.n_dec),
            ("d_emb", self.d_emb),
            ("n_hd", self.n_hd),
            ("d_hd", self.d_hd),
            ("dtype_bytes", self.dtype_bytes),
        ] {
            if v == 0 {
                return bad(format!("{field} must be positive"));
            }
        }
        match self.attention {
            AttentionVariant::Mha => {}
            AttentionVariant::Gqa { group_size } => {
                if group_size == 0 || self.n_hd % group_size != 0 {
                    return bad(format!("GQA group size {group_size} must divide n_hd {}", self.n_hd));
                }
            }
            AttentionVariant::Mla { d_qco, d_kvco, d_rope } => {
                if d_qco == 0 || d_kvco == 0 || d_rope == 0 {
                    return bad("MLA dims must be positive".into());
                }
                if d_kvco >= self.d_dec() {
                    return bad(format!("d_kvco {d_kvco} must be < d_dec {}", self.d_dec()));
                }
            }
        }
        match self.ffn {
            FfnVariant::Dense { d_ffn, .. } => {
                if d_ffn == 0 {
                    return bad("d_ffn must be positive".into());
                }
            }
            FfnVariant::Moe {
                n_e,
                n_k,
                n_shared,
                d_moe,
                n_dense_blocks,
                d_dense_ffn,
            } => {
                if d_moe == 0 {
                    return bad("d_moe must be positive".into());
                }
                if n_k > n_e {
                    return bad(format!("n_k {n_k} must not exceed n_e {n_e}"));
                }
                if n_e > 0 && n_k == 0 {
                    return bad("n_k must be >= 1 when routed experts exist".into());
                }
                if n_e == 0 && n_shared == 0 {
                    return bad("MoE block needs at least one expert".into());
                }
                if n_dense_blocks >= self.n_dec {
                    return bad(format!("n_dense_blocks {n_dense_blocks} must be < n_dec {}", self.n_dec));
                }
                if n_dense_blocks > 0 && d_dense_ffn == 0 {
                    return bad("d_dense_ffn must be positive when dense blocks exist".into());
                }
            }
        }
        Ok(())
    }

    pub fn d_dec(&self) -> u64 {
        self.n_hd * self.d_hd
    }

    pub fn is_moe(&self) -> bool {
        matches!(self.ffn, FfnVariant::Moe { .. })
    }

    /// KV heads actually stored (n_hd for MHA, n_hd/g for GQA, 1 latent for MLA).
    pub fn n_kv_heads(&self) -> u64 {
        match self.attention {
            AttentionVariant::Mha => self.n_hd,
            AttentionVariant::Gqa { group_size } => self.n_hd / group_size,
            AttentionVariant::Mla { .. } => 1,
        }
    }

    /// Decoder blocks whose FFN is an MoE layer.
    pub fn n_moe_blocks(&self) -> u64 {
        match self.ffn {
            FfnVariant::Dense { .. } => 0,
            FfnVariant::Moe { n_dense_blocks, .. } => self.n_dec - n_dense_blocks,
        }
    }

    /// Decoder blocks whose FFN is dense.
    pub fn n_dense_blocks(&self) -> u64 {
        self.n_dec - self.n_moe_blocks()
    }

    /// Cached elements per token for one decoder block.
    pub fn kv_elems_per_token_per_block(&self) -> u64 {
        match self.attention {
            AttentionVariant::Mha => 2 * self.d_dec(),
            AttentionVariant::Gqa { group_size } => 2 * self.d_dec() / group_size,
            AttentionVariant::Mla { d_kvco, d_rope, .. } => d_kvco + d_rope,
        }
    }

    /// KV-cache bytes per token per decoder block (M_KVcache).
    pub fn kv_bytes_per_token_per_block(&self) -> u64 {
        self.kv_elems_per_token_per_block() * self.dtype_bytes
    }

    /// KV-cache bytes per token across all decoder blocks.
    pub fn kv_bytes_per_token(&self) -> u64 {
        self.kv_bytes_per_token_per_block() * self.n_dec
    }

    /// Attention weight elements of one decoder block, split into
    /// (replicated-under-TP, head-partitioned) parts.
    pub(crate) fn attn_weight_elems_split(&self) -> (u64, u64) {
        let (e, dec) = (self.d_emb, self.d_dec());
        match self.attention {
            AttentionVariant::Mha => (0, 4 * e * dec),
            AttentionVariant::Gqa { group_size } => (0, 2 * e * dec + 2 * e * dec / group_size),
            AttentionVariant::Mla { d_qco, d_kvco, d_rope } => {
                // W_CQ, W_CKV, W_RK
                let shared = e * d_qco + e * d_kvco + e * d_rope;
                // W_DQ, W_DK, W_DV, W_RQ, W_attn_out
                let per_head = d_qco * dec + 2 * d_kvco * dec + d_qco * self.n_hd * d_rope + dec * e;
                (shared, per_head)
            }
        }
    }

    pub fn attn_weight_elems(&self) -> u64 {
        let (a, b) = self.attn_weight_elems_split();
        a + b
    }

    /// Attention weight bytes of one decoder block (M_attn).
    pub fn attn_weight_bytes(&self) -> u64 {
        self.attn_weight_elems() * self.dtype_bytes
    }

    pub fn expert_weight_elems(&self) -> u64 {
        match self.ffn {
            FfnVariant::Moe { d_moe, .. } => 3 * self.d_emb * d_moe,
            FfnVariant::Dense { .. } => 0,
        }
    }

    /// Bytes of one routed or shared expert (gate, up and down projections).
    pub fn expert_weight_bytes(&self) -> u64 {
        self.expert_weight_elems() * self.dtype_bytes
    }

    pub fn router_weight_elems(&self) -> u64 {
        match self.ffn {
            FfnVariant::Moe { n_e, n_k, .. } if n_k < n_e => self.d_emb * n_e,
            _ => 0,
        }
    }

    /// MoE weight bytes of one MoE block (M_MoE): all experts plus router.
    pub fn moe_weight_bytes(&self) -> u64 {
        match self.ffn {
            FfnVariant::Moe { n_e, n_shared, .. } => {
                ((n_e + n_shared) * self.expert_weight_elems() + self.router_weight_elems()) * self.dtype_bytes
            }
            FfnVariant::Dense { .. } => 0,
        }
    }

    pub fn dense_ffn_weight_elems(&self) -> u64 {
        match self.ffn {
            FfnVariant::Dense { d_ffn, gated } => (if gated { 3 } else { 2 }) * self.d_emb * d_ffn,
            FfnVariant::Moe { d_dense_ffn, .. } => 3 * self.d_emb * d_dense_ffn,
        }
    }

    /// Dense FFN weight bytes of one dense block (M_FFN).
    pub fn dense_ffn_weight_bytes(&self) -> u64 {
        self.dense_ffn_weight_elems() * self.dtype_bytes
    }

    /// Weight bytes of the whole decoder stack, each weight stored once.
    pub fn total_weight_bytes(&self) -> u64 {
        self.n_dec * self.attn_weight_bytes()
            + self.n_moe_blocks() * self.moe_weight_bytes()
            + self.n_dense_blocks() * self.dense_ffn_weight_bytes()
    }

    pub fn total_params(&self) -> u64 {
        self.total_weight_bytes() / self.dtype_bytes
    }

    /// Parameters touched to produce one token.
    pub fn activated_params_per_token(&self) -> u64 {
        let attn = self.attn_weight_elems();
        let dense_block = attn + self.dense_ffn_weight_elems();
        let moe_block = match self.ffn {
            FfnVariant::Moe { n_k, n_shared, .. } => {
                attn + (n_k + n_shared) * self.expert_weight_elems() + self.router_weight_elems()
            }
            FfnVariant::Dense { .. } => 0,
        };
        self.n_dense_blocks() * dense_block + self.n_moe_blocks() * moe_block
    }

    /// Activation widths (elements per token) used by the decode-stage FC layers.
    pub(crate) fn widest_fc_row(&self) -> u64 {
        let ffn = match self.ffn {
            FfnVariant::Dense { d_ffn, .. } => d_ffn,
            FfnVariant::Moe { d_moe, d_dense_ffn, .. } => d_moe.max(d_dense_ffn),
        };
        self.d_emb.max(self.d_dec()).max(ffn)
    }
}

pub fn model_preset_names() -> Vec<&'static str> {
    vec!["deepseek-r1", "gpt-3"]
}

pub fn model_preset(name: &str) -> Result<ModelSpec> {
    match name.to_ascii_lowercase().replace('_', "-").as_str() {
        "deepseek-r1" | "deepseek" => Ok(deepseek_r1()),
        "gpt-3" | "gpt3" => Ok(gpt3()),
        _ => Err(SimError::UnknownPreset(name.to_string())),
    }
}

/// DeepSeek-R1: 61 blocks, MLA attention, 256 routed + 1 shared expert, first
/// three blocks dense.
pub fn deepseek_r1() -> ModelSpec {
    ModelSpec {
        name: "DeepSeek-R1".into(),
        n_dec: 61,
        d_emb: 7168,
        n_hd: 128,
        d_hd: 128,
        attention: AttentionVariant::Mla {
            d_qco: 1536,
            d_kvco: 512,
            d_rope: 64,
        },
        ffn: FfnVariant::Moe {
            n_e: 256,
            n_k: 8,
            n_shared: 1,
            d_moe: 2048,
            n_dense_blocks: 3,
            d_dense_ffn: 18432,
        },
        dtype_bytes: 2,
    }
}

/// GPT-3 175B from its public architecture: 96 blocks of MHA with d = 12288 and
/// a two-layer FFN of width 4d.
pub fn gpt3() -> ModelSpec {
    ModelSpec {
        name: "GPT-3".into(),
        n_dec: 96,
        d_emb: 12288,
        n_hd: 96,
        d_hd: 128,
        attention: AttentionVariant::Mha,
        ffn: FfnVariant::Dense {
            d_ffn: 4 * 12288,
            gated: false,
        },
        dtype_bytes: 2,
    }
}
