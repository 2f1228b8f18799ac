//! Foreground mask synthesis: `random` and `grid` select cells of an `m × m`
//! partition, `block` unions randomly warped rectangles.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::image::ForegroundMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Random,
    Grid,
    Block,
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskStrategy::Random),
            "grid" => Ok(MaskStrategy::Grid),
            "block" => Ok(MaskStrategy::Block),
            other => Err(Error::Usage(format!("unknown mask strategy `{other}`"))),
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Random => "random",
            MaskStrategy::Grid => "grid",
            MaskStrategy::Block => "block",
        })
    }
}

/// How to draw a mask. `partition` is the number of cells per side used by
/// the random and grid strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub partition: usize,
    pub target_ratio: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::Random,
            partition: 8,
            target_ratio: 0.5,
        }
    }
}

/// Smallest side accepted by the block strategy.
pub const BLOCK_MIN_SIDE: usize = 16;
const BLOCK_MAX_ITERATIONS: usize = 100_000;

impl MaskSpec {
    pub fn new(strategy: MaskStrategy, partition: usize, target_ratio: f64) -> Result<Self> {
        let spec = Self {
            strategy,
            partition,
            target_ratio,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_ratio) {
            return Err(param_err!("mask ratio must be in [0, 1], got {}", self.target_ratio));
        }
        if self.strategy != MaskStrategy::Block && self.partition < 2 {
            return Err(param_err!("mask partition must be >= 2, got {}", self.partition));
        }
        Ok(())
    }

    /// Checks that an `h × w` image can carry this mask.
    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        match self.strategy {
            MaskStrategy::Random | MaskStrategy::Grid => {
                let m = self.partition;
                if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
                    return Err(shape_err!("{h}x{w} image is not divisible into {m}x{m} cells"));
                }
            }
            MaskStrategy::Block => {
                if h < BLOCK_MIN_SIDE || w < BLOCK_MIN_SIDE {
                    return Err(shape_err!(
                        "block masks need at least {BLOCK_MIN_SIDE}x{BLOCK_MIN_SIDE} pixels, got {h}x{w}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of cells a cell-based strategy sets.
    pub fn cell_count(&self) -> usize {
        let cells = self.partition * self.partition;
        ((self.target_ratio * cells as f64).round() as usize).min(cells)
    }

    /// Draws a mask. `grid` ignores the RNG.
    pub fn generate<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> Result<ForegroundMask> {
        match self.strategy {
            MaskStrategy::Random => random_mask(self, h, w, rng),
            MaskStrategy::Grid => grid_mask(self, h, w),
            MaskStrategy::Block => block_mask(self, h, w, rng),
        }
    }
}

fn fill_cells(spec: &MaskSpec, h: usize, w: usize, cells: impl IntoIterator<Item = usize>) -> ForegroundMask {
    let m = spec.partition;
    let (ch, cw) = (h / m, w / m);
    let mut mask = ForegroundMask::empty(h, w);
    for cell in cells {
        let (cr, cc) = (cell / m, cell % m);
        for r in cr * ch..(cr + 1) * ch {
            for c in cc * cw..(cc + 1) * cw {
                mask.set(r, c, true);
            }
        }
    }
    mask
}

/// Selects `round(ratio · m²)` cells uniformly without replacement.
pub fn random_mask<R: Rng + ?Sized>(spec: &MaskSpec, h: usize, w: usize, rng: &mut R) -> Result<ForegroundMask> {
    spec.check_dims(h, w)?;
    let m = spec.partition;
    let chosen = index::sample(rng, m * m, spec.cell_count());
    Ok(fill_cells(spec, h, w, chosen.iter()))
}

/// Cell order used by the grid strategy: checkerboard cells (`(row + col)`
/// even) in row-major order, then the remaining cells in row-major order.
pub fn grid_cell_order(m: usize) -> Vec<usize> {
    let board = (0..m * m).filter(|i| (i / m + i % m) % 2 == 0);
    let rest = (0..m * m).filter(|i| (i / m + i % m) % 2 == 1);
    board.chain(rest).collect()
}

/// The fixed mask: the first `round(ratio · m²)` cells of [`grid_cell_order`].
pub fn grid_mask(spec: &MaskSpec, h: usize, w: usize) -> Result<ForegroundMask> {
    spec.check_dims(h, w)?;
    let order = grid_cell_order(spec.partition);
    Ok(fill_cells(spec, h, w, order.into_iter().take(spec.cell_count())))
}

/// A convex polygon in pixel coordinates (x right, y down).
#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    pub vertices: Vec<(f64, f64)>,
}

impl Quad {
    /// Inclusive point-in-convex-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let mut sign = 0.0f64;
        for i in 0..n {
            let (ax, ay) = self.vertices[i];
            let (bx, by) = self.vertices[(i + 1) % n];
            let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite corners"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Block strategy, returning the warped regions alongside the mask.
///
/// Each iteration draws a rectangle whose area is uniform in 10–40% of the
/// remaining pixel deficit, with log-uniform aspect ratio in `[1/3, 3]`,
/// jitters each corner by up to a quarter of the adjacent side, rasterizes
/// the convex hull of the jittered corners (pixel centres), and unions it in.
/// Stops as soon as the target ratio is reached.
pub fn block_mask_with_regions<R: Rng + ?Sized>(
    spec: &MaskSpec,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<(ForegroundMask, Vec<Quad>)> {
    spec.check_dims(h, w)?;
    let mut mask = ForegroundMask::empty(h, w);
    let mut quads = Vec::new();
    let total = (h * w) as f64;
    let target = spec.target_ratio * total;
    let mut count = 0usize;
    let (wf, hf) = (w as f64, h as f64);
    let log_aspect = 3.0f64.ln();

    for _ in 0..BLOCK_MAX_ITERATIONS {
        if count as f64 >= target {
            return Ok((mask, quads));
        }
        let deficit = target - count as f64;
        let area = (rng.gen_range(0.1..=0.4) * deficit).max(4.0);
        let aspect = rng.gen_range(-log_aspect..=log_aspect).exp();
        let rh = (area * aspect).sqrt().clamp(2.0, hf);
        let rw = (area / aspect).sqrt().clamp(2.0, wf);
        let x0 = rng.gen_range(0.0..=wf - rw);
        let y0 = rng.gen_range(0.0..=hf - rh);
        let corners = [(x0, y0), (x0 + rw, y0), (x0 + rw, y0 + rh), (x0, y0 + rh)];
        let jittered: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(x, y)| {
                let dx = rng.gen_range(-0.25..=0.25) * rw;
                let dy = rng.gen_range(-0.25..=0.25) * rh;
                (x + dx, y + dy)
            })
            .collect();
        let quad = Quad {
            vertices: convex_hull(jittered),
        };

        let (min_x, max_x, min_y, max_y) = quad.vertices.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        let c0 = (min_x - 0.5).floor().max(0.0) as usize;
        let c1 = ((max_x - 0.5).ceil().max(0.0) as usize).min(w - 1);
        let r0 = (min_y - 0.5).floor().max(0.0) as usize;
        let r1 = ((max_y - 0.5).ceil().max(0.0) as usize).min(h - 1);
        let mut added = 0;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if !mask.get(r, c) && quad.contains(c as f64 + 0.5, r as f64 + 0.5) {
                    mask.set(r, c, true);
                    added += 1;
                }
            }
        }
        count += added;
        quads.push(quad);
    }
    Err(param_err!("block mask did not reach ratio {} in {BLOCK_MAX_ITERATIONS} iterations", spec.target_ratio))
}

pub fn block_mask<R: Rng + ?Sized>(spec: &MaskSpec, h: usize, w: usize, rng: &mut R) -> Result<ForegroundMask> {
    block_mask_with_regions(spec, h, w, rng).map(|(m, _)| m)
}
