//! Frame series, the `NWDS` container, selection, windowing, splits,
//! normalisation and the synthetic advection generator.

mod dataset;
mod nwds;
mod select;
mod synth;
mod window;

pub use dataset::{prepare_from_parts, prepare_splits, Dataset, PrepareConfig, SampleBatch, Splits};
pub use nwds::{read_nwds, read_nwds_file, write_nwds, write_nwds_file, NWDS_MAGIC};
pub use select::{crop_center, select_rainy};
pub use synth::{synth_generate, SynthConfig};
pub use window::{make_windows, windows_csv, GateMode, Window, WindowSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Physical meaning of frame values.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Unit {
    /// Accumulated rain per frame interval, in hundredths of a millimetre.
    RawHundredthsMm,
    /// Cloud mask, values in {0, 1}.
    Binary,
    /// Dimensionless values, e.g. heatmaps in [0, 1].
    Unitless,
}

impl Unit {
    pub fn code(self) -> u8 {
        match self {
            Unit::RawHundredthsMm => 0,
            Unit::Binary => 1,
            Unit::Unitless => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Unit::RawHundredthsMm),
            1 => Some(Unit::Binary),
            2 => Some(Unit::Unitless),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::RawHundredthsMm => "raw_hundredths_mm",
            Unit::Binary => "binary",
            Unit::Unitless => "unitless",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "raw_hundredths_mm" => Ok(Unit::RawHundredthsMm),
            "binary" => Ok(Unit::Binary),
            "unitless" => Ok(Unit::Unitless),
            _ => Err(Error::Format(format!("unknown unit {s:?}"))),
        }
    }
}

/// An ordered sequence of `[1, 1, H, W]` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSeries {
    frames: Vec<Tensor4<f32>>,
    pub interval_minutes: u32,
    pub unit: Unit,
    /// Optional acquisition times; not persisted by the container.
    pub timestamps: Option<Vec<i64>>,
}

impl FrameSeries {
    pub fn new(frames: Vec<Tensor4<f32>>, interval_minutes: u32, unit: Unit) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::Data("interval_minutes must be positive".into()));
        }
        if let Some(first) = frames.first() {
            let s0 = first.shape();
            for (i, f) in frames.iter().enumerate() {
                let s = f.shape();
                if s.n != 1 || s.c != 1 || s.h != s0.h || s.w != s0.w {
                    return Err(Error::Data(format!(
                        "frame {i} has shape {s}, expected [1, 1, {}, {}]",
                        s0.h, s0.w
                    )));
                }
                if f.data().iter().any(|&v| v < 0.0) {
                    return Err(Error::Data(format!("frame {i} has negative values")));
                }
                if unit == Unit::Binary && f.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Data(format!("binary frame {i} has values outside {{0, 1}}")));
                }
            }
        }
        Ok(FrameSeries {
            frames,
            interval_minutes,
            unit,
            timestamps: None,
        })
    }

    pub fn with_timestamps(mut self, ts: Vec<i64>) -> Result<Self> {
        if ts.len() != self.frames.len() || ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(
                "timestamps must match the frame count and increase strictly".into(),
            ));
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    pub fn frames(&self) -> &[Tensor4<f32>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(H, W)`, or `None` for an empty series.
    pub fn frame_size(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.shape().h, f.shape().w))
    }

    /// Frames `range` as a new series with the same metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FrameSeries {
        FrameSeries {
            frames: self.frames[range.clone()].to_vec(),
            interval_minutes: self.interval_minutes,
            unit: self.unit,
            timestamps: self.timestamps.as_ref().map(|t| t[range].to_vec()),
        }
    }

    /// Largest value over all frames.
    pub fn max_value(&self) -> f32 {
        self.frames
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .fold(0.0, f32::max)
    }
}

/// Chronological split into consecutive train/val/test series.
/// `floor(len * train)` and `floor(len * val)` frames go to the first two.
pub fn split_series(series: &FrameSeries, train: f64, val: f64) -> Result<[FrameSeries; 3]> {
    if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
        return Err(Error::Config(format!("invalid split ratios {train}/{val}")));
    }
    let n = series.len();
    let a = (n as f64 * train).floor() as usize;
    let b = a + (n as f64 * val).floor() as usize;
    Ok([series.slice(0..a), series.slice(a..b), series.slice(b..n)])
}

/// Scale `s` for normalised values `raw / s`: the training-split maximum,
/// or 1 for binary data.
pub fn normalization_scale(train: &FrameSeries) -> Result<f32> {
    if train.unit == Unit::Binary {
        return Ok(1.0);
    }
    let m = train.max_value();
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::Data(
            "training split maximum is zero; cannot normalise degenerate data".into(),
        ))
    }
}

pub fn normalize(t: &Tensor4<f32>, scale: f32) -> Tensor4<f32> {
    t.map(|v| v / scale)
}

pub fn denormalize(t: &Tensor4<f32>, scale: f32) -> Tensor4<f32> {
    t.map(|v| v * scale)
}
