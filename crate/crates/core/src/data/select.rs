use std::collections::BTreeSet;

use super::FrameSeries;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Indices of frames whose share of strictly positive pixels is at least
/// `fraction`.
pub fn select_rainy(series: &FrameSeries, fraction: f64) -> Result<BTreeSet<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(series
        .frames()
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            let wet = f.data().iter().filter(|&&v| v > 0.0).count();
            wet as f64 / f.numel() as f64 >= fraction
        })
        .map(|(i, _)| i)
        .collect())
}

/// Centre crop of a `[1, 1, H, W]` frame; the offset on each axis is
/// `floor((H - size) / 2)`.
pub fn crop_center(frame: &Tensor4<f32>, size: usize) -> Result<Tensor4<f32>> {
    let s = frame.shape();
    if s.n != 1 || s.c != 1 || s.h < size || s.w < size || size == 0 {
        return Err(Error::dim(
            "crop_center",
            format!("cannot crop {size}x{size} from frame {s}"),
        ));
    }
    let (oy, ox) = ((s.h - size) / 2, (s.w - size) / 2);
    Ok(Tensor4::from_fn([1, 1, size, size], |_, _, y, x| {
        frame.at(0, 0, y + oy, x + ox)
    }))
}
