//! Reconstruction losses on the `[0, 1]` scale. Multiply by `255²` to
//! compare with the metrics.

use crate::error::{param_err, shape_err, Result};
use crate::image::{ForegroundMask, ImageBuffer};
use crate::tensor::{Tape, Tensor, Var};

/// Foreground area floor at 256×256.
pub const MIN_AREA_AT_256: f64 = 100.0;

/// Area floor for an `h×w` image, scaled from 100 pixels at 256×256.
pub fn default_min_area(h: usize, w: usize) -> f64 {
    MIN_AREA_AT_256 * (h * w) as f64 / (256.0 * 256.0)
}

/// Mean squared error.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Squared error summed over every pixel and channel, divided by
/// `C · max(min_area, foreground pixels)`. With a full mask and
/// `min_area ≤ h·w` this equals [`mse_loss`].
pub fn fn_mse_loss(tape: &mut Tape, pred: Var, target: Var, mask: &ForegroundMask, min_area: f64) -> Result<Var> {
    let channels = fn_mse_channels(tape.value(pred), mask)?;
    if !(min_area >= 0.0) {
        return Err(param_err!("minimum area must be non-negative, got {min_area}"));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let total = tape.sum(sq);
    let denom = channels as f64 * (mask.count() as f64).max(min_area);
    if denom == 0.0 {
        return Err(param_err!("empty mask with zero minimum area"));
    }
    Ok(tape.scale(total, 1.0 / denom))
}

fn fn_mse_channels(pred: &Tensor, mask: &ForegroundMask) -> Result<usize> {
    match *pred.shape() {
        [h, w, c] if h == mask.height() && w == mask.width() => Ok(c),
        ref s => Err(shape_err!(
            "prediction {s:?} does not match a {}×{} mask",
            mask.height(),
            mask.width()
        )),
    }
}

/// Image as a `[h, w, c]` tensor.
pub fn image_tensor(img: &ImageBuffer) -> Tensor {
    Tensor::new(&[img.height(), img.width(), img.channels()], img.data().to_vec()).expect("image shape")
}

/// [`mse_loss`] without a tape.
pub fn mse_value(pred: &ImageBuffer, target: &ImageBuffer) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(image_tensor(pred));
    let t = tape.constant(image_tensor(target));
    let l = mse_loss(&mut tape, p, t)?;
    tape.value(l).item()
}

/// [`fn_mse_loss`] without a tape.
pub fn fn_mse_value(pred: &ImageBuffer, target: &ImageBuffer, mask: &ForegroundMask, min_area: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(image_tensor(pred));
    let t = tape.constant(image_tensor(target));
    let l = fn_mse_loss(&mut tape, p, t, mask, min_area)?;
    tape.value(l).item()
}
