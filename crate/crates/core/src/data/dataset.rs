use std::collections::BTreeSet;
use std::sync::Arc;

use super::{make_windows, normalization_scale, select_rainy, split_series, FrameSeries, Unit, Window, WindowSpec};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// Normalised inputs `[n, input_frames, H, W]` and targets
/// `[n, targets, H, W]`, both divided by `scale`.
#[derive(Clone, Debug)]
pub struct SampleBatch<T> {
    pub inputs: Tensor4<T>,
    pub targets: Tensor4<T>,
    pub scale: f32,
}

/// Windows over one split, with its frames already normalised.
#[derive(Clone, Debug)]
pub struct Dataset {
    frames: Arc<Vec<Tensor4<f32>>>,
    windows: Vec<Window>,
    spec: WindowSpec,
    scale: f32,
    pub unit: Unit,
    pub interval_minutes: u32,
}

impl Dataset {
    pub fn new(series: &FrameSeries, spec: &WindowSpec, selected: &BTreeSet<usize>, scale: f32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Data(format!("normalisation scale {scale} must be positive")));
        }
        let windows = make_windows(series.len(), spec, selected)?;
        let frames = series.frames().iter().map(|f| f.map(|v| v / scale)).collect();
        Ok(Dataset {
            frames: Arc::new(frames),
            windows,
            spec: spec.clone(),
            scale,
            unit: series.unit,
            interval_minutes: series.interval_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s.h, s.w)
    }

    /// Keeps only the windows at the given positions.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let windows: Vec<Window> = keep
            .iter()
            .map(|&i| {
                self.windows
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("window {i} out of range")))
            })
            .collect::<Result<_>>()?;
        if windows.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        Ok(Dataset {
            windows,
            ..self.clone()
        })
    }

    fn stack<T: Real>(&self, idx: &[usize], channels: impl Fn(&Window) -> Vec<usize>) -> Tensor4<T> {
        let (h, w) = self.frame_size();
        let c = channels(&self.windows[idx[0]]).len();
        let mut data = Vec::with_capacity(idx.len() * c * h * w);
        for &i in idx {
            for f in channels(&self.windows[i]) {
                data.extend(self.frames[f].data().iter().map(|&v| T::from_f64_lossy(v as f64)));
            }
        }
        Tensor4::from_raw(Shape4::new(idx.len(), c, h, w), data)
    }

    /// Assembles the windows at positions `idx`, in that order.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<SampleBatch<T>> {
        if idx.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.windows.len()) {
            return Err(Error::Usage(format!(
                "window {bad} out of range ({} windows)",
                self.windows.len()
            )));
        }
        Ok(SampleBatch {
            inputs: self.stack(idx, |w| w.inputs.clone().collect()),
            targets: self.stack(idx, |w| w.targets.clone()),
            scale: self.scale,
        })
    }

    pub fn all<T: Real>(&self) -> Result<SampleBatch<T>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

#[derive(Clone, Debug)]
pub struct PrepareConfig {
    pub spec: WindowSpec,
    /// Minimum share of wet pixels for a frame to count as selected.
    pub select_fraction: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
}

impl PrepareConfig {
    pub fn new(spec: WindowSpec) -> Self {
        PrepareConfig {
            spec,
            select_fraction: 0.5,
            train_ratio: 0.7,
            val_ratio: 0.15,
        }
    }

    pub fn with_fraction(mut self, f: f64) -> Self {
        self.select_fraction = f;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub scale: f32,
}

/// Splits one series chronologically and builds the three datasets with
/// the training-split scale.
pub fn prepare_splits(series: &FrameSeries, cfg: &PrepareConfig) -> Result<Splits> {
    let [a, b, c] = split_series(series, cfg.train_ratio, cfg.val_ratio)?;
    prepare_from_parts(&a, &b, &c, cfg)
}

/// Builds datasets from already separated splits.
pub fn prepare_from_parts(
    train: &FrameSeries,
    val: &FrameSeries,
    test: &FrameSeries,
    cfg: &PrepareConfig,
) -> Result<Splits> {
    for (name, s) in [("val", val), ("test", test)] {
        if s.frame_size() != train.frame_size() || s.unit != train.unit || s.interval_minutes != train.interval_minutes
        {
            return Err(Error::Data(format!("{name} split metadata differs from train")));
        }
    }
    let scale = normalization_scale(train)?;
    let build = |name: &str, s: &FrameSeries| -> Result<Dataset> {
        let sel = select_rainy(s, cfg.select_fraction)?;
        Dataset::new(s, &cfg.spec, &sel, scale).map_err(|e| match e {
            Error::EmptyDataset(m) => Error::EmptyDataset(format!("{name} split: {m}")),
            e => e,
        })
    };
    Ok(Splits {
        train: build("train", train)?,
        val: build("val", val)?,
        test: build("test", test)?,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> FrameSeries {
        let frames = (0..n).map(|i| Tensor4::full([1, 1, 2, 2], (i + 1) as f32)).collect();
        FrameSeries::new(frames, 5, Unit::RawHundredthsMm).unwrap()
    }

    #[test]
    fn batch_layout() {
        let s = ramp(10);
        let all: BTreeSet<usize> = (0..10).collect();
        let d = Dataset::new(&s, &WindowSpec::new(3, vec![2]), &all, 10.0).unwrap();
        assert_eq!(d.len(), 6);
        let b = d.batch::<f32>(&[1, 0]).unwrap();
        assert_eq!(b.inputs.shape(), Shape4::new(2, 3, 2, 2));
        assert_eq!(b.inputs.at(0, 0, 0, 0), 0.2);
        assert_eq!(b.inputs.at(1, 2, 1, 1), 0.3);
        assert_eq!(b.targets.at(0, 0, 0, 0), 0.6);
    }

    #[test]
    fn splits_share_training_scale() {
        let s = ramp(40);
        let sp = prepare_splits(&s, &PrepareConfig::new(WindowSpec::new(2, vec![1]))).unwrap();
        assert_eq!(sp.scale, 28.0);
        assert_eq!(sp.train.len(), 26);
        assert_eq!(sp.val.len(), 4);
        assert_eq!(sp.test.len(), 4);
    }
}
