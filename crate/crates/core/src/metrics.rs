//! Harmonization metrics on the 0–255 scale: MSE, PSNR, and their
//! foreground-only variants fMSE and fPSNR.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::image::{quantize, ForegroundMask, ImageBuffer};

/// PSNR reported for a zero-error comparison.
pub const PSNR_CAP: f64 = 100.0;
const PEAK_SQ: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub fmse: f64,
    pub fpsnr: f64,
    pub fg_pixel_count: usize,
}

/// Which pixel values to compare.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scale {
    /// `255 · v` in floating point.
    #[default]
    Float,
    /// The quantized 8-bit values that would be written to disk.
    Quantized,
}

impl Scale {
    #[inline]
    fn value(self, v: f64) -> f64 {
        match self {
            Scale::Float => 255.0 * v,
            Scale::Quantized => f64::from(quantize(v)),
        }
    }
}

/// `10 · log10(255² / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (PEAK_SQ / mse).log10()).min(PSNR_CAP)
    }
}

fn squared_error_sum(pred: &ImageBuffer, gt: &ImageBuffer, mask: Option<&ForegroundMask>, scale: Scale) -> f64 {
    let ch = pred.channels();
    pred.data()
        .chunks_exact(ch)
        .zip(gt.data().chunks_exact(ch))
        .enumerate()
        .filter(|(i, _)| mask.map_or(true, |m| m.bits()[*i]))
        .map(|(_, (p, g))| {
            p.iter()
                .zip(g)
                .map(|(&a, &b)| {
                    let d = scale.value(a) - scale.value(b);
                    d * d
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn mse_with(pred: &ImageBuffer, gt: &ImageBuffer, scale: Scale) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    if pred.data().is_empty() {
        return Err(param_err!("cannot compare empty images"));
    }
    Ok(squared_error_sum(pred, gt, None, scale) / pred.data().len() as f64)
}

/// Mean over all pixels and channels of `(255·pred − 255·gt)²`.
pub fn mse(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    mse_with(pred, gt, Scale::Float)
}

pub fn psnr(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<f64> {
    mse(pred, gt).map(psnr_from_mse)
}

pub fn fmse_with(pred: &ImageBuffer, gt: &ImageBuffer, mask: &ForegroundMask, scale: Scale) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    mask.ensure_matches(pred)?;
    let fg = mask.count();
    if fg == 0 {
        return Err(param_err!("fMSE needs at least one foreground pixel"));
    }
    Ok(squared_error_sum(pred, gt, Some(mask), scale) / (fg * pred.channels()) as f64)
}

/// MSE restricted to foreground pixels.
pub fn fmse(pred: &ImageBuffer, gt: &ImageBuffer, mask: &ForegroundMask) -> Result<f64> {
    fmse_with(pred, gt, mask, Scale::Float)
}

pub fn fpsnr(pred: &ImageBuffer, gt: &ImageBuffer, mask: &ForegroundMask) -> Result<f64> {
    fmse(pred, gt, mask).map(psnr_from_mse)
}

/// All four metrics for one image.
pub fn evaluate_with(pred: &ImageBuffer, gt: &ImageBuffer, mask: &ForegroundMask, scale: Scale) -> Result<MetricReport> {
    let mse = mse_with(pred, gt, scale)?;
    let fmse = fmse_with(pred, gt, mask, scale)?;
    Ok(MetricReport {
        mse,
        psnr: psnr_from_mse(mse),
        fmse,
        fpsnr: psnr_from_mse(fmse),
        fg_pixel_count: mask.count(),
    })
}

pub fn evaluate(pred: &ImageBuffer, gt: &ImageBuffer, mask: &ForegroundMask) -> Result<MetricReport> {
    evaluate_with(pred, gt, mask, Scale::Float)
}

/// Dataset-level row: the mean of each per-image metric (PSNR averaged in
/// dB). `fg_pixel_count` is the total over all images.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(param_err!("cannot aggregate an empty list of reports"));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        mse: mean(|r| r.mse),
        psnr: mean(|r| r.psnr),
        fmse: mean(|r| r.fmse),
        fpsnr: mean(|r| r.fpsnr),
        fg_pixel_count: reports.iter().map(|r| r.fg_pixel_count).sum(),
    })
}
