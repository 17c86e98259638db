//! Closed-form parameter and FLOP counts.
//!
//! Every term mirrors an operation recorded by [`Perceiver::forward`] and
//! uses the same per-op costs as the tape's counter (see
//! [`crate::tensor::flops`]), so analytic and instrumented totals agree
//! exactly. Shared tables are counted once, charged to their first use.
//!
//! [`Perceiver::forward`]: crate::model::Perceiver::forward

use std::collections::HashSet;

use crate::attention::AttentionBlockConfig;
use crate::baselines::ByteTransformerConfig;
use crate::error::{Error, Result};
use crate::model::{PerceiverConfig, Stage};
use crate::positional::modality_embed_sizes;
use crate::tensor::flops::{self, GELU_PER_SCALAR, LAYER_NORM_PER_SCALAR, SOFTMAX_PER_SCALAR};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountReport {
    pub rows: Vec<CountRow>,
    pub params: u64,
    pub flops: u64,
}

impl CountReport {
    fn from_rows(rows: Vec<CountRow>) -> Self {
        let params = rows.iter().map(|r| r.params).sum();
        let flops = rows.iter().map(|r| r.flops).sum();
        CountReport { rows, params, flops }
    }

    /// Fused multiply-add convention: roughly half the unfused total.
    pub fn fused_flops(&self) -> u64 {
        self.flops / 2
    }

    pub fn row(&self, name: &str) -> Option<&CountRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Total without the classifier head.
    pub fn flops_without_head(&self) -> u64 {
        self.flops - self.row("head").map_or(0, |r| r.flops)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,flops\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, r.params, r.flops));
        }
        s
    }
}

fn layer_norm_params(c: u64) -> u64 {
    2 * c
}

fn linear_params(cin: u64, cout: u64) -> u64 {
    cin * cout + cout
}

fn dense_params(d: u64, hidden: u64) -> u64 {
    layer_norm_params(d) + linear_params(d, hidden) + linear_params(hidden, d)
}

fn dense_flops(n: u64, d: u64, hidden: u64) -> u64 {
    LAYER_NORM_PER_SCALAR * n * d
        + flops::linear(n, d, hidden)
        + GELU_PER_SCALAR * n * hidden
        + flops::linear(n, hidden, d)
        + n * d
}

/// Score product, scale, softmax and value product over all heads.
fn attention_core_flops(n: u64, m: u64, qk: u64, v: u64, heads: u64) -> u64 {
    flops::matmul(n, qk, m) + heads * n * m * (1 + SOFTMAX_PER_SCALAR) + flops::matmul(n, m, v)
}

pub fn cross_attention_params(cfg: &AttentionBlockConfig, input_channels: usize) -> u64 {
    let (d, c) = (cfg.output_channels as u64, input_channels as u64);
    let (qk, v) = (cfg.qk_channels as u64, cfg.v_channels as u64);
    layer_norm_params(d)
        + layer_norm_params(c)
        + linear_params(d, qk)
        + linear_params(c, qk)
        + linear_params(c, v)
        + linear_params(v, d)
        + dense_params(d, cfg.dense_hidden() as u64)
}

/// One cross-attend of `n` latents over `m` inputs.
pub fn cross_attention_flops(cfg: &AttentionBlockConfig, input_channels: usize, n: usize, m: usize) -> u64 {
    let (d, c) = (cfg.output_channels as u64, input_channels as u64);
    let (qk, v) = (cfg.qk_channels as u64, cfg.v_channels as u64);
    let (n, m) = (n as u64, m as u64);
    LAYER_NORM_PER_SCALAR * n * d
        + LAYER_NORM_PER_SCALAR * m * c
        + flops::linear(n, d, qk)
        + flops::linear(m, c, qk)
        + flops::linear(m, c, v)
        + attention_core_flops(n, m, qk, v, cfg.num_heads as u64)
        + flops::linear(n, v, d)
        + n * d
        + dense_flops(n, d, cfg.dense_hidden() as u64)
}

pub fn self_attention_params(cfg: &AttentionBlockConfig) -> u64 {
    let d = cfg.output_channels as u64;
    let (qk, v) = (cfg.qk_channels as u64, cfg.v_channels as u64);
    layer_norm_params(d)
        + 2 * linear_params(d, qk)
        + linear_params(d, v)
        + linear_params(v, d)
        + dense_params(d, cfg.dense_hidden() as u64)
}

/// One self-attention block over `n` tokens.
pub fn self_attention_flops(cfg: &AttentionBlockConfig, n: usize) -> u64 {
    let d = cfg.output_channels as u64;
    let (qk, v) = (cfg.qk_channels as u64, cfg.v_channels as u64);
    let n = n as u64;
    LAYER_NORM_PER_SCALAR * n * d
        + 2 * flops::linear(n, d, qk)
        + flops::linear(n, d, v)
        + attention_core_flops(n, n, qk, v, cfg.num_heads as u64)
        + flops::linear(n, v, d)
        + n * d
        + dense_flops(n, d, cfg.dense_hidden() as u64)
}

/// Mean-pool plus linear classifier.
fn head_row(n: usize, d: usize, classes: usize) -> CountRow {
    let (n, d, k) = (n as u64, d as u64, classes as u64);
    CountRow {
        name: "head".into(),
        params: linear_params(d, k),
        flops: flops::mean_over_index(n, d) + flops::linear(1, d, k),
    }
}

/// Parameters of `config`, broken down like [`count_flops`] but with zero
/// FLOPs.
pub fn count_params(config: &PerceiverConfig) -> Result<CountReport> {
    let m = config.learned_position.map_or(1, |lp| lp.rows.max(1));
    let mut r = count(config, m)?;
    r.rows.iter_mut().for_each(|row| row.flops = 0);
    Ok(CountReport::from_rows(r.rows))
}

/// Parameters and per-forward FLOPs for a byte array of `m` rows.
pub fn count_flops(config: &PerceiverConfig, m: usize) -> Result<CountReport> {
    count(config, m)
}

fn count(config: &PerceiverConfig, m: usize) -> Result<CountReport> {
    config.validate()?;
    if m == 0 {
        return Err(Error::Config("input size M must be at least 1".into()));
    }
    let (n, d) = (config.latent_n, config.latent_d);
    let mut rows = vec![CountRow { name: "latent".into(), params: (n * d) as u64, flops: 0 }];
    if !config.modalities.is_empty() {
        let channels: Vec<usize> = config.modalities.iter().map(|x| x.feature_channels).collect();
        let mins: Vec<usize> = config.modalities.iter().map(|x| x.min_embed).collect();
        let (_, sizes) = modality_embed_sizes(&channels, &mins)?;
        rows.push(CountRow {
            name: "modality_embeddings".into(),
            params: sizes.iter().sum::<usize>() as u64,
            flops: (m * config.input_channels) as u64,
        });
    }
    if let Some(lp) = config.learned_position {
        if lp.rows != m {
            return Err(Error::Config(format!("learned position table has {} rows but M is {m}", lp.rows)));
        }
        rows.push(CountRow { name: "position".into(), params: (lp.rows * lp.channels) as u64, flops: 0 });
    }
    let cross_cfg = config.cross_block_config();
    let latent_cfg = config.latent_block_config();
    let c = config.cross_input_channels();
    let mut seen_cross = HashSet::new();
    let mut seen_tower = HashSet::new();
    for stage in config.stages() {
        match stage {
            Stage::Cross(i) => {
                let fresh = seen_cross.insert(config.cross_set_for(i));
                rows.push(CountRow {
                    name: format!("cross_attend.{i}"),
                    params: if fresh { cross_attention_params(&cross_cfg, c) } else { 0 },
                    flops: cross_attention_flops(&cross_cfg, c, n, m),
                });
            }
            Stage::Tower(t) => {
                if config.self_attends_per_block == 0 {
                    continue;
                }
                let fresh = seen_tower.insert(config.tower_set_for(t));
                let blocks = config.self_attends_per_block as u64;
                rows.push(CountRow {
                    name: format!("latent_tower.{t}"),
                    params: if fresh { blocks * self_attention_params(&latent_cfg) } else { 0 },
                    flops: blocks * self_attention_flops(&latent_cfg, n),
                });
            }
        }
    }
    rows.push(head_row(n, d, config.num_classes));
    Ok(CountReport::from_rows(rows))
}

/// Counts for the byte-level Transformer baseline on `m` inputs.
pub fn count_byte_transformer(config: &ByteTransformerConfig, m: usize) -> Result<CountReport> {
    config.validate()?;
    if m == 0 {
        return Err(Error::Config("input size M must be at least 1".into()));
    }
    let (c, d) = (config.input_channels as u64, config.width as u64);
    let block = config.block_config();
    let mut rows = vec![CountRow {
        name: "input_projection".into(),
        params: linear_params(c, d),
        flops: flops::linear(m as u64, c, d),
    }];
    for l in 0..config.layers {
        rows.push(CountRow {
            name: format!("block.{l}"),
            params: self_attention_params(&block),
            flops: self_attention_flops(&block, m),
        });
    }
    rows.push(head_row(m, config.width, config.num_classes));
    Ok(CountReport::from_rows(rows))
}
