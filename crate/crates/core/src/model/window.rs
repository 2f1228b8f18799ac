//! Window geometry for shifted-window attention.
//!
//! A token grid is `[gh, gw, C]`, row-major. Windowed layout is
//! `[nW, K·K, C]` with windows in row-major order. Cyclic shift and
//! partition are folded into one gather map so the tape sees a single
//! differentiable permutation.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Additive logit for pairs that must not attend to each other.
pub const MASK_VALUE: f64 = -1e9;

/// Shape of a windowed token grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub window: usize,
}

impl WindowGrid {
    pub fn new(grid_h: usize, grid_w: usize, window: usize) -> Result<Self> {
        if window == 0 || grid_h % window != 0 || grid_w % window != 0 {
            return Err(shape_err!("token grid {grid_h}×{grid_w} is not tiled by {window}×{window} windows"));
        }
        Ok(Self { grid_h, grid_w, window })
    }

    pub fn windows(&self) -> usize {
        (self.grid_h / self.window) * (self.grid_w / self.window)
    }

    pub fn window_tokens(&self) -> usize {
        self.window * self.window
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// `((window_row, window_col), (local_row, local_col))` of a token.
    pub fn locate(&self, row: usize, col: usize) -> ((usize, usize), (usize, usize)) {
        let k = self.window;
        ((row / k, col / k), (row % k, col % k))
    }

    /// Shift actually applied for a requested shift: none when one window
    /// covers the whole grid.
    pub fn effective_shift(&self, shift: usize) -> usize {
        if self.grid_h <= self.window && self.grid_w <= self.window {
            0
        } else {
            shift % self.window
        }
    }

    /// Source token for every windowed position, after rolling the grid by
    /// `(-shift, -shift)`.
    pub fn partition_index(&self, shift: usize) -> Vec<usize> {
        let k = self.window;
        let (gh, gw) = (self.grid_h, self.grid_w);
        let mut index = Vec::with_capacity(self.tokens());
        for wr in 0..gh / k {
            for wc in 0..gw / k {
                for lr in 0..k {
                    for lc in 0..k {
                        let r = (wr * k + lr + shift) % gh;
                        let c = (wc * k + lc + shift) % gw;
                        index.push(r * gw + c);
                    }
                }
            }
        }
        index
    }

    /// Inverse of [`partition_index`](Self::partition_index): windowed
    /// position of every grid token.
    pub fn reverse_index(&self, shift: usize) -> Vec<usize> {
        let forward = self.partition_index(shift);
        let mut inverse = vec![0; forward.len()];
        for (pos, &src) in forward.iter().enumerate() {
            inverse[src] = pos;
        }
        inverse
    }

    /// `[nW, T, T]` additive mask for a shifted layout: zero within a
    /// pre-shift region, [`MASK_VALUE`] across regions. All zeros when
    /// `shift == 0`.
    pub fn attention_mask(&self, shift: usize) -> Tensor {
        let t = self.window_tokens();
        let mut data = vec![0.0; self.windows() * t * t];
        if shift > 0 {
            let k = self.window;
            let region = |pos: usize, len: usize| {
                if pos < len - k {
                    0
                } else if pos < len - shift {
                    1
                } else {
                    2
                }
            };
            let labels: Vec<usize> = self
                .partition_index(0)
                .iter()
                .map(|&tok| region(tok / self.grid_w, self.grid_h) * 3 + region(tok % self.grid_w, self.grid_w))
                .collect();
            for w in 0..self.windows() {
                let lab = &labels[w * t..(w + 1) * t];
                for i in 0..t {
                    for j in 0..t {
                        if lab[i] != lab[j] {
                            data[w * t * t + i * t + j] = MASK_VALUE;
                        }
                    }
                }
            }
        }
        Tensor::new(&[self.windows(), t, t], data).expect("mask shape")
    }

    /// Flat index into a `[(2K−1)², heads]` table for every entry of a
    /// `[heads·nW, T, T]` bias tensor.
    pub fn relative_bias_index(&self, heads: usize) -> Vec<usize> {
        let k = self.window;
        let t = self.window_tokens();
        let span = 2 * k - 1;
        let mut index = Vec::with_capacity(heads * self.windows() * t * t);
        for h in 0..heads {
            for _ in 0..self.windows() {
                for i in 0..t {
                    for j in 0..t {
                        let dy = i / k + k - 1 - j / k;
                        let dx = i % k + k - 1 - j % k;
                        index.push((dy * span + dx) * heads + h);
                    }
                }
            }
        }
        index
    }
}

pub(crate) fn shared(index: Vec<usize>) -> Arc<[usize]> {
    index.into()
}

fn check_grid(grid: &Tensor) -> Result<(usize, usize, usize)> {
    match *grid.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err!("expected a [h, w, c] token grid, got {s:?}")),
    }
}

fn gather_rows(data: &[f64], index: &[usize], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(index.len() * c);
    for &i in index {
        out.extend_from_slice(&data[i * c..(i + 1) * c]);
    }
    out
}

/// `[gh, gw, C]` → `[nW, K·K, C]`.
pub fn window_partition(grid: &Tensor, window: usize) -> Result<Tensor> {
    let (h, w, c) = check_grid(grid)?;
    let g = WindowGrid::new(h, w, window)?;
    Tensor::new(&[g.windows(), g.window_tokens(), c], gather_rows(grid.data(), &g.partition_index(0), c))
}

/// `[nW, K·K, C]` → `[gh, gw, C]`.
pub fn window_reverse(windows: &Tensor, grid_h: usize, grid_w: usize) -> Result<Tensor> {
    let [nw, t, c] = *windows.shape() else {
        return Err(shape_err!("expected [nW, T, C] windows, got {:?}", windows.shape()));
    };
    let k = (t as f64).sqrt().round() as usize;
    if k * k != t {
        return Err(shape_err!("window token count {t} is not a square"));
    }
    let g = WindowGrid::new(grid_h, grid_w, k)?;
    if g.windows() != nw {
        return Err(shape_err!("{nw} windows do not tile a {grid_h}×{grid_w} grid"));
    }
    Tensor::new(&[grid_h, grid_w, c], gather_rows(windows.data(), &g.reverse_index(0), c))
}

/// Rolls a `[gh, gw, C]` grid by `(-dy, -dx)`, wrapping around.
pub fn cyclic_shift(grid: &Tensor, dy: isize, dx: isize) -> Result<Tensor> {
    let (h, w, c) = check_grid(grid)?;
    let mut index = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let sr = (r as isize + dy).rem_euclid(h as isize) as usize;
            let sc = (col as isize + dx).rem_euclid(w as isize) as usize;
            index.push(sr * w + sc);
        }
    }
    Tensor::new(&[h, w, c], gather_rows(grid.data(), &index, c))
}
