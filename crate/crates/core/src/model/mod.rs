//! SwinIH: a shifted-window transformer that maps a composite image plus its
//! foreground mask to a harmonized image at the input resolution.
//!
//! The input is folded into `N×N` patches of 4 channels (RGB + mask) and
//! projected to `D`-wide tokens. Three stages of Swin blocks follow (depths
//! 3, 3, 5 by default), with a per-token linear projection doubling the
//! width after the first two. A tail layer, global attention by default,
//! precedes a linear head that unfolds every token back to `N×N×3` pixels
//! through a sigmoid.

mod flops;
mod window;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use flops::{attention_flops, forward_flops, AttentionFlops};
pub use window::{cyclic_shift, window_partition, window_reverse, WindowGrid, MASK_VALUE};

use crate::error::{param_err, shape_err, Error, Result};
use crate::image::{ForegroundMask, ImageBuffer};
use crate::tensor::{load_checkpoint, save_checkpoint, Tape, Tensor, Var};
use window::shared;

/// Channels of the model input: RGB plus the mask.
pub const INPUT_CHANNELS: usize = 4;
const LN_EPS: f64 = 1e-5;
const TABLE_STD: f64 = 0.02;

/// Layer after the last stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Full self-attention over every token.
    GlobalAttention,
    /// One more windowed block (the local-only variant).
    SwinBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMode {
    /// Every stage runs on the patch grid.
    FullRes,
    /// Stages 2 and 3 run on a 2× merged grid; tokens are split back before
    /// the head.
    Bottleneck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub window_size: usize,
    pub embed_dim: usize,
    pub heads: Vec<usize>,
    pub depths: Vec<usize>,
    pub tail: Tail,
    pub resolution: ResolutionMode,
    pub mlp_ratio: usize,
    /// Alternate blocks use a half-window cyclic shift.
    pub shifted_windows: bool,
    /// Learned relative position bias in windowed blocks.
    pub relative_position_bias: bool,
}

impl ModelConfig {
    /// 32×32 inputs, `N=4`, `K=4`, `D=16`, two heads per stage.
    pub fn desk() -> Self {
        Self {
            patch_size: 4,
            window_size: 4,
            embed_dim: 16,
            heads: vec![2, 2, 2],
            depths: vec![3, 3, 5],
            tail: Tail::GlobalAttention,
            resolution: ResolutionMode::FullRes,
            mlp_ratio: 4,
            shifted_windows: true,
            relative_position_bias: false,
        }
    }

    /// 256×256 inputs, `N=4`, `K=32`, `D=128`.
    pub fn paper_shape() -> Self {
        Self {
            patch_size: 4,
            window_size: 32,
            embed_dim: 128,
            heads: vec![4, 8, 16],
            ..Self::desk()
        }
    }

    pub fn with_tail(mut self, tail: Tail) -> Self {
        self.tail = tail;
        self
    }

    pub fn with_resolution(mut self, mode: ResolutionMode) -> Self {
        self.resolution = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.window_size == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return Err(param_err!("patch size, window size, width and mlp ratio must be positive"));
        }
        if self.depths.len() != 3 || self.heads.len() != 3 {
            return Err(param_err!("expected 3 stages, got depths {:?} heads {:?}", self.depths, self.heads));
        }
        for s in 0..3 {
            let dim = self.stage_dim(s);
            let h = self.heads[s];
            if h == 0 || dim % h != 0 {
                return Err(param_err!("stage {s}: width {dim} is not divisible by {h} heads"));
            }
        }
        Ok(())
    }

    /// Token width in stage `s` (0-based).
    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s.min(2)
    }

    pub fn final_dim(&self) -> usize {
        self.stage_dim(2)
    }

    /// Token grid of stage `s` for an `h×w` image.
    pub fn stage_grid(&self, s: usize, h: usize, w: usize) -> (usize, usize) {
        let (gh, gw) = (h / self.patch_size, w / self.patch_size);
        match self.resolution {
            ResolutionMode::Bottleneck if s > 0 => (gh / 2, gw / 2),
            _ => (gh, gw),
        }
    }

    /// Checks that an `h×w` image tiles into windows at every stage.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let n = self.patch_size;
        if h % n != 0 || w % n != 0 {
            return Err(shape_err!("{h}×{w} image is not divisible into {n}×{n} patches"));
        }
        let step = match self.resolution {
            ResolutionMode::FullRes => n * self.window_size,
            ResolutionMode::Bottleneck => 2 * n * self.window_size,
        };
        if h % step != 0 || w % step != 0 || h == 0 || w == 0 {
            return Err(shape_err!("{h}×{w} image must be a positive multiple of {step} for this config"));
        }
        Ok(())
    }

    /// Visual tokens for an `h×w` image: `h·w/N²`.
    pub fn token_count(&self, h: usize, w: usize) -> usize {
        (h / self.patch_size) * (w / self.patch_size)
    }
}

/// Parameter slots of one attention block.
#[derive(Clone, Debug)]
struct BlockSlots {
    ln1: (usize, usize),
    qkv: (usize, usize),
    proj: (usize, usize),
    rel_table: Option<usize>,
    ln2: (usize, usize),
    fc1: (usize, usize),
    fc2: (usize, usize),
    heads: usize,
    shift: bool,
    global: bool,
}

#[derive(Clone, Debug)]
struct Layout {
    embed: (usize, usize),
    stages: Vec<Vec<BlockSlots>>,
    /// Width doubling (or patch merge) after stages 0 and 1.
    transitions: Vec<(usize, usize)>,
    tail: BlockSlots,
    split: Option<(usize, usize)>,
    norm: (usize, usize),
    head: (usize, usize),
}

enum Init {
    /// `N(0, 1/fan_in)`.
    FanIn,
    /// `N(0, 0.02²)`.
    Table,
    Zeros,
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((shape.to_vec(), init));
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        self.linear_init(prefix, fan_in, fan_out, Init::FanIn)
    }

    fn linear_init(&mut self, prefix: &str, fan_in: usize, fan_out: usize, init: Init) -> (usize, usize) {
        let w = self.add(format!("{prefix}.weight"), &[fan_in, fan_out], init);
        let b = self.add(format!("{prefix}.bias"), &[fan_out], Init::Zeros);
        (w, b)
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> (usize, usize) {
        let g = self.add(format!("{prefix}.gamma"), &[dim], Init::Ones);
        let b = self.add(format!("{prefix}.beta"), &[dim], Init::Zeros);
        (g, b)
    }

    fn block(&mut self, prefix: &str, cfg: &ModelConfig, dim: usize, heads: usize, shift: bool, global: bool) -> BlockSlots {
        let k = cfg.window_size;
        BlockSlots {
            ln1: self.norm(&format!("{prefix}.norm1"), dim),
            qkv: self.linear(&format!("{prefix}.qkv"), dim, 3 * dim),
            proj: self.linear_init(&format!("{prefix}.proj"), dim, dim, Init::Zeros),
            rel_table: (cfg.relative_position_bias && !global).then(|| {
                self.add(format!("{prefix}.rel_bias"), &[(2 * k - 1) * (2 * k - 1), heads], Init::Table)
            }),
            ln2: self.norm(&format!("{prefix}.norm2"), dim),
            fc1: self.linear(&format!("{prefix}.mlp.fc1"), dim, cfg.mlp_ratio * dim),
            fc2: self.linear_init(&format!("{prefix}.mlp.fc2"), cfg.mlp_ratio * dim, dim, Init::Zeros),
            heads,
            shift,
            global,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let n = cfg.patch_size;
    let embed = b.linear("embed", n * n * INPUT_CHANNELS, cfg.embed_dim);
    let mut stages = Vec::new();
    let mut transitions = Vec::new();
    for s in 0..3 {
        let dim = cfg.stage_dim(s);
        let blocks = (0..cfg.depths[s])
            .map(|i| {
                let shift = cfg.shifted_windows && i % 2 == 1;
                b.block(&format!("stage{s}.block{i}"), cfg, dim, cfg.heads[s], shift, false)
            })
            .collect();
        stages.push(blocks);
        if s < 2 {
            let fan_in = match (cfg.resolution, s) {
                (ResolutionMode::Bottleneck, 0) => 4 * dim,
                _ => dim,
            };
            transitions.push(b.linear(&format!("stage{s}.expand"), fan_in, 2 * dim));
        }
    }
    let fd = cfg.final_dim();
    let tail = match cfg.tail {
        Tail::GlobalAttention => b.block("tail", cfg, fd, cfg.heads[2], false, true),
        Tail::SwinBlock => {
            let shift = cfg.shifted_windows && cfg.depths[2] % 2 == 1;
            b.block("tail", cfg, fd, cfg.heads[2], shift, false)
        }
    };
    let split = (cfg.resolution == ResolutionMode::Bottleneck).then(|| b.linear("split", fd, 4 * fd));
    let norm = b.norm("norm", fd);
    let head = b.linear("head", fd, n * n * 3);
    (
        Layout {
            embed,
            stages,
            transitions,
            tail,
            split,
            norm,
            head,
        },
        b,
    )
}

/// Attention probabilities recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub block: String,
    /// `[heads·nW, T, T]`, batch index `head·nW + window`.
    pub weights: Tensor,
    pub windows: usize,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct SwinIH {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layout: Layout,
}

/// Per-token `[gh·gw, N²·4]` patch vectors, each ordered `(row, col, channel)`
/// with the mask as channel 3.
pub fn patch_tokens(composite: &ImageBuffer, mask: &ForegroundMask, patch: usize) -> Result<Tensor> {
    if composite.channels() != 3 {
        return Err(shape_err!("composite must be RGB"));
    }
    mask.ensure_matches(composite)?;
    let (h, w) = (composite.height(), composite.width());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(shape_err!("{h}×{w} image is not divisible into {patch}×{patch} patches"));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut data = Vec::with_capacity(h * w * INPUT_CHANNELS);
    for tr in 0..gh {
        for tc in 0..gw {
            for pr in 0..patch {
                for pc in 0..patch {
                    let (r, c) = (tr * patch + pr, tc * patch + pc);
                    data.extend_from_slice(composite.pixel(r, c));
                    data.push(if mask.get(r, c) { 1.0 } else { 0.0 });
                }
            }
        }
    }
    Tensor::new(&[gh * gw, patch * patch * INPUT_CHANNELS], data)
}

/// Position in `[gh·gw, N²·3]` head output of every `[h, w, 3]` pixel.
fn unpatch_index(h: usize, w: usize, patch: usize) -> Vec<usize> {
    let gw = w / patch;
    let mut index = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let tok = (r / patch) * gw + c / patch;
            let within = (r % patch) * patch + c % patch;
            for ch in 0..3 {
                index.push(tok * patch * patch * 3 + within * 3 + ch);
            }
        }
    }
    index
}

/// Gathers 2×2 token neighbourhoods: `[gh·gw, C]` → `[(gh/2)·(gw/2), 4C]`,
/// expressed as an index into the flat input.
fn merge_index(gh: usize, gw: usize, c: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(gh * gw * c);
    for r in 0..gh / 2 {
        for col in 0..gw / 2 {
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let tok = (2 * r + dr) * gw + 2 * col + dc;
                index.extend(tok * c..(tok + 1) * c);
            }
        }
    }
    index
}

/// Inverse layout of [`merge_index`]: `[(gh/2)·(gw/2), 4C]` → `[gh·gw, C]`.
fn split_index(gh: usize, gw: usize, c: usize) -> Vec<usize> {
    let forward = merge_index(gh, gw, c);
    let mut inverse = vec![0; forward.len()];
    for (pos, &src) in forward.iter().enumerate() {
        inverse[src] = pos;
    }
    inverse
}

impl SwinIH {
    /// Matrices drawn from `N(0, 1/fan_in)`, except the output projection of
    /// every residual branch, which starts at zero so each block begins as
    /// the identity. Zero biases, unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, builder) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Normal::new(0.0, TABLE_STD).expect("valid std");
        let params = builder
            .shapes
            .iter()
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::FanIn => {
                        let normal = Normal::new(0.0, 1.0 / (shape[0] as f64).sqrt()).expect("valid std");
                        (0..n).map(|_| normal.sample(&mut rng)).collect()
                    }
                    Init::Table => (0..n).map(|_| table.sample(&mut rng)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Tensor::new(shape, data).expect("layout shapes are valid")
            })
            .collect();
        Ok(Self {
            config,
            names: builder.names,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.named_params().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    pub fn forward(&self, composite: &ImageBuffer, mask: &ForegroundMask) -> Result<ImageBuffer> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let out = self.forward_on_tape(&mut tape, &vars, composite, mask)?;
        self.to_image(&tape, out, composite.height(), composite.width())
    }

    fn bind_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Converts a `[h, w, 3]` output var to an image.
    pub fn to_image(&self, tape: &Tape, out: Var, h: usize, w: usize) -> Result<ImageBuffer> {
        ImageBuffer::from_clamped(h, w, 3, tape.value(out).data().to_vec())
    }

    /// Runs the forward pass with `params` as the bound weights (see
    /// [`bind`](Self::bind)). Returns a `[h, w, 3]` var in `(0, 1)`.
    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], composite: &ImageBuffer, mask: &ForegroundMask) -> Result<Var> {
        self.run(tape, params, composite, mask, None)
    }

    /// Attention probabilities of every block, in execution order.
    pub fn attention_maps(&self, composite: &ImageBuffer, mask: &ForegroundMask) -> Result<Vec<AttentionMap>> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let mut trace = Vec::new();
        self.run(&mut tape, &vars, composite, mask, Some(&mut trace))?;
        Ok(trace
            .into_iter()
            .map(|(block, var, windows, heads)| AttentionMap {
                block,
                weights: tape.value(var).clone(),
                windows,
                heads,
            })
            .collect())
    }

    /// Token grid after the patch projection, `[gh, gw, D]`.
    pub fn patch_embed(&self, composite: &ImageBuffer, mask: &ForegroundMask) -> Result<Tensor> {
        let n = self.config.patch_size;
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let x = self.embed(&mut tape, &vars, composite, mask)?;
        tape.value(x).reshaped(&[composite.height() / n, composite.width() / n, self.config.embed_dim])
    }

    fn embed(&self, tape: &mut Tape, p: &[Var], composite: &ImageBuffer, mask: &ForegroundMask) -> Result<Var> {
        let tokens = tape.constant(patch_tokens(composite, mask, self.config.patch_size)?);
        let (w, b) = self.layout.embed;
        let x = tape.matmul(tokens, p[w])?;
        tape.add_bias(x, p[b])
    }

    fn run(
        &self,
        tape: &mut Tape,
        p: &[Var],
        composite: &ImageBuffer,
        mask: &ForegroundMask,
        mut trace: Option<&mut Vec<(String, Var, usize, usize)>>,
    ) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::Usage(format!("{} vars bound for {} parameters", p.len(), self.params.len())));
        }
        let cfg = &self.config;
        let (h, w) = (composite.height(), composite.width());
        cfg.check_input(h, w)?;
        let mut x = self.embed(tape, p, composite, mask)?;
        for s in 0..3 {
            let grid = cfg.stage_grid(s, h, w);
            for (i, block) in self.layout.stages[s].iter().enumerate() {
                let name = format!("stage{s}.block{i}");
                x = self.block(tape, p, x, block, grid, &name, trace.as_deref_mut())?;
            }
            if s < 2 {
                if cfg.resolution == ResolutionMode::Bottleneck && s == 0 {
                    let c = cfg.stage_dim(0);
                    let idx = shared(merge_index(grid.0, grid.1, c));
                    x = tape.gather(x, idx, &[grid.0 * grid.1 / 4, 4 * c])?;
                }
                let (wt, b) = self.layout.transitions[s];
                x = tape.matmul(x, p[wt])?;
                x = tape.add_bias(x, p[b])?;
            }
        }
        let grid = cfg.stage_grid(2, h, w);
        x = self.block(tape, p, x, &self.layout.tail, grid, "tail", trace.as_deref_mut())?;
        let fd = cfg.final_dim();
        if let Some((wt, b)) = self.layout.split {
            x = tape.matmul(x, p[wt])?;
            x = tape.add_bias(x, p[b])?;
            let full = cfg.stage_grid(0, h, w);
            let idx = shared(split_index(full.0, full.1, fd));
            x = tape.gather(x, idx, &[full.0 * full.1, fd])?;
        }
        let (g, b) = self.layout.norm;
        x = tape.layer_norm(x, p[g], p[b], LN_EPS)?;
        let (wt, b) = self.layout.head;
        x = tape.matmul(x, p[wt])?;
        x = tape.add_bias(x, p[b])?;
        let idx = shared(unpatch_index(h, w, cfg.patch_size));
        x = tape.gather(x, idx, &[h, w, 3])?;
        Ok(tape.sigmoid(x))
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        tape: &mut Tape,
        p: &[Var],
        x: Var,
        slots: &BlockSlots,
        (gh, gw): (usize, usize),
        name: &str,
        trace: Option<&mut Vec<(String, Var, usize, usize)>>,
    ) -> Result<Var> {
        let dim = tape.shape(x)[1];
        let heads = slots.heads;
        let hd = dim / heads;
        let geom = if slots.global {
            None
        } else {
            Some(WindowGrid::new(gh, gw, self.config.window_size)?)
        };
        let (nw, t) = match geom {
            Some(g) => (g.windows(), g.window_tokens()),
            None => (1, gh * gw),
        };
        let shift = match (geom, slots.shift) {
            (Some(g), true) => g.effective_shift(self.config.window_size / 2),
            _ => 0,
        };

        let mut hdn = tape.layer_norm(x, p[slots.ln1.0], p[slots.ln1.1], LN_EPS)?;
        if let Some(g) = geom {
            hdn = tape.gather(hdn, shared(row_index(&g.partition_index(shift), dim)), &[nw * t, dim])?;
        }
        let qkv = tape.matmul(hdn, p[slots.qkv.0])?;
        let qkv = tape.add_bias(qkv, p[slots.qkv.1])?;
        let qkv = tape.reshape(qkv, &[nw, t, 3 * heads, hd])?;
        let qkv = tape.permute(qkv, &[2, 0, 1, 3])?;
        let qkv = tape.reshape(qkv, &[3 * heads * nw, t, hd])?;
        let q = tape.slice(qkv, 0, 0, heads * nw)?;
        let k = tape.slice(qkv, 0, heads * nw, 2 * heads * nw)?;
        let v = tape.slice(qkv, 0, 2 * heads * nw, 3 * heads * nw)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let mut scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
        if let Some(table) = slots.rel_table {
            let g = geom.expect("windowed block");
            let idx = shared(g.relative_bias_index(heads));
            let bias = tape.gather(p[table], idx, &[heads * nw, t, t])?;
            scores = tape.add(scores, bias)?;
        }
        if let (Some(g), true) = (geom, shift > 0) {
            let m = g.attention_mask(shift);
            let mut data = Vec::with_capacity(heads * m.len());
            for _ in 0..heads {
                data.extend_from_slice(m.data());
            }
            let mask = tape.constant(Tensor::new(&[heads * nw, t, t], data)?);
            scores = tape.add(scores, mask)?;
        }
        let attn = tape.softmax(scores, 2)?;
        if let Some(trace) = trace {
            trace.push((name.to_string(), attn, nw, heads));
        }
        let out = tape.matmul(attn, v)?;
        let out = tape.reshape(out, &[heads, nw, t, hd])?;
        let out = tape.permute(out, &[1, 2, 0, 3])?;
        let out = tape.reshape(out, &[nw * t, dim])?;
        let out = tape.matmul(out, p[slots.proj.0])?;
        let mut out = tape.add_bias(out, p[slots.proj.1])?;
        if let Some(g) = geom {
            out = tape.gather(out, shared(row_index(&g.reverse_index(shift), dim)), &[gh * gw, dim])?;
        }
        let x = tape.add(x, out)?;

        let hdn = tape.layer_norm(x, p[slots.ln2.0], p[slots.ln2.1], LN_EPS)?;
        let hdn = tape.matmul(hdn, p[slots.fc1.0])?;
        let hdn = tape.add_bias(hdn, p[slots.fc1.1])?;
        let hdn = tape.gelu(hdn);
        let hdn = tape.matmul(hdn, p[slots.fc2.0])?;
        let hdn = tape.add_bias(hdn, p[slots.fc2.1])?;
        tape.add(x, hdn)
    }

    /// Named parameters as `(name, tensor)` pairs, in layout order.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_named(), serde_json::to_value(&self.config)?)
    }

    /// Loads a checkpoint. The config comes from the JSON index when
    /// present, otherwise from `fallback`.
    pub fn load(path: &Path, fallback: Option<ModelConfig>) -> Result<Self> {
        let (tensors, index) = load_checkpoint(path)?;
        let config = match (index, fallback) {
            (Some(index), _) => serde_json::from_value(index.config)?,
            (None, Some(cfg)) => cfg,
            (None, None) => return Err(Error::Format("checkpoint has no config index".into())),
        };
        let mut model = Self::new(config, 0)?;
        model.load_named(tensors)?;
        Ok(model)
    }

    /// Replaces every parameter; names and shapes must match the layout.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for ((name, t), (want, cur)) in tensors.iter().zip(self.names.iter().zip(&self.params)) {
            if name != want || t.shape() != cur.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {name} {:?} does not match {want} {:?}",
                    t.shape(),
                    cur.shape()
                )));
            }
        }
        self.params = tensors.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }
}

/// Expands a token permutation to a flat index over `[tokens, dim]` rows.
fn row_index(tokens: &[usize], dim: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len() * dim);
    for &t in tokens {
        out.extend(t * dim..(t + 1) * dim);
    }
    out
}
