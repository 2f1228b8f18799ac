//! Analytic floating-point operation counts. A multiply-add counts as two.

use super::{ModelConfig, ResolutionMode, Tail, WindowGrid};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionFlops {
    /// `QKᵀ` and `A·V` inside windowed blocks.
    pub swin: u64,
    /// `QKᵀ` and `A·V` of the global tail.
    pub global: u64,
}

/// Cost of the attention products alone: `4·nW·T²·C` per block, i.e.
/// `4·(h·w/N²)·K²·C` windowed and `4·(h·w/N²)²·C` global.
pub fn attention_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<AttentionFlops> {
    cfg.check_input(h, w)?;
    let mut out = AttentionFlops::default();
    let windowed = |s: usize| -> Result<u64> {
        let (gh, gw) = cfg.stage_grid(s, h, w);
        let g = WindowGrid::new(gh, gw, cfg.window_size)?;
        let t = g.window_tokens() as u64;
        Ok(4 * g.windows() as u64 * t * t * cfg.stage_dim(s) as u64)
    };
    for s in 0..3 {
        out.swin += cfg.depths[s] as u64 * windowed(s)?;
    }
    match cfg.tail {
        Tail::SwinBlock => out.swin += windowed(2)?,
        Tail::GlobalAttention => {
            let (gh, gw) = cfg.stage_grid(2, h, w);
            let t = (gh * gw) as u64;
            out.global = 4 * t * t * cfg.final_dim() as u64;
        }
    }
    Ok(out)
}

/// Total forward cost: attention products plus every linear layer.
pub fn forward_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    let attn = attention_flops(cfg, h, w)?;
    let n = cfg.patch_size as u64;
    let r = cfg.mlp_ratio as u64;
    let linear = |tokens: u64, fan_in: u64, fan_out: u64| 2 * tokens * fan_in * fan_out;
    let block = |tokens: u64, c: u64| linear(tokens, c, 3 * c) + linear(tokens, c, c) + 2 * linear(tokens, c, r * c);

    let t0 = cfg.token_count(h, w) as u64;
    let d = cfg.embed_dim as u64;
    let mut total = attn.swin + attn.global + linear(t0, n * n * 4, d);
    for s in 0..3 {
        let (gh, gw) = cfg.stage_grid(s, h, w);
        let t = (gh * gw) as u64;
        let c = cfg.stage_dim(s) as u64;
        total += cfg.depths[s] as u64 * block(t, c);
        if s < 2 {
            let (nh, nw) = cfg.stage_grid(s + 1, h, w);
            let fan_in = if cfg.resolution == ResolutionMode::Bottleneck && s == 0 { 4 * c } else { c };
            total += linear((nh * nw) as u64, fan_in, 2 * c);
        }
    }
    let (gh, gw) = cfg.stage_grid(2, h, w);
    let fd = cfg.final_dim() as u64;
    total += block((gh * gw) as u64, fd);
    if cfg.resolution == ResolutionMode::Bottleneck {
        total += linear((gh * gw) as u64, fd, 4 * fd);
    }
    total += linear(t0, fd, n * n * 3);
    Ok(total)
}
