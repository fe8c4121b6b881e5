//! Grad-CAM for image-to-image prediction.
//!
//! The score is the sum of the raw predictions over the pixels that
//! binarise as positive; the mask is a constant. For a traced activation
//! `A` of shape `[1, k, h, w]`, `α_k` is the spatial mean of `∂score/∂A_k`
//! and the map is `relu(Σ_k α_k A_k)`, resized bilinearly to the input
//! size and divided by its maximum.

use std::io::Write;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::metrics::{binarize, UnitMeta};
use crate::model::Model;
use crate::nn::{Ctx, Mode, Probe};
use crate::real::Real;
use crate::tensor::ops::resize_bilinear;
use crate::tensor::Tensor4;

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum ScoreMode {
    /// Sum of raw predictions over the positive mask.
    #[default]
    MaskedSum,
    /// The masked sum divided by the number of masked pixels.
    MaskedMean,
}

#[derive(Clone, Debug)]
pub struct GradCamOptions {
    pub threshold: f64,
    pub mode: ScoreMode,
    /// Constant factor applied to the score before back-propagation.
    pub score_scale: f64,
}

impl Default for GradCamOptions {
    fn default() -> Self {
        GradCamOptions {
            threshold: crate::metrics::RAIN_THRESHOLD_MM_H,
            mode: ScoreMode::MaskedSum,
            score_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// `[1, 1, H, W]`, values in `[0, 1]`.
    pub values: Tensor4<f32>,
    pub target: String,
    /// Maximum before normalisation; zero means an all-zero map.
    pub raw_max: f64,
    /// Per-channel weights `α_k`.
    pub alpha: Vec<f64>,
    /// `relu(Σ α_k A_k)` at the layer's own resolution, `[1, 1, h, w]`.
    pub coarse: Tensor4<f64>,
}

/// The positive-class mask of a prediction, as a constant tensor.
pub fn score_mask<T: Real>(pred: &Tensor4<T>, meta: &UnitMeta, threshold: f64) -> Tensor4<T> {
    binarize(pred, threshold, meta)
}

/// Score of a single-sample prediction and the number of masked pixels.
/// A zero count means the score is identically zero.
pub fn rain_score<T: Real>(
    g: &Graph<T>,
    pred: &Var<T>,
    meta: &UnitMeta,
    opts: &GradCamOptions,
) -> Result<(Var<T>, usize)> {
    if pred.shape().n != 1 {
        return Err(Error::Usage(format!(
            "rain_score needs a single-sample prediction, got {}",
            pred.shape()
        )));
    }
    let mask = score_mask(pred.value(), meta, opts.threshold);
    let count = mask.data().iter().filter(|&&m| m != T::zero()).count();
    let mut s = g.masked_sum(pred, &mask)?;
    let mut factor = opts.score_scale;
    if opts.mode == ScoreMode::MaskedMean && count > 0 {
        factor /= count as f64;
    }
    if factor != 1.0 {
        s = g.scale(&s, T::from_f64_lossy(factor))?;
    }
    Ok((s, count))
}

/// `α_k`: spatial means of the gradient, one per channel.
pub fn channel_weights<T: Real>(grad: &Tensor4<T>) -> Vec<f64> {
    let s = grad.shape();
    (0..s.c)
        .map(|k| grad.plane(0, k).iter().map(|v| v.as_f64()).sum::<f64>() / s.plane() as f64)
        .collect()
}

/// `relu(Σ_k α_k A_k)` at the activation's resolution, `[1, 1, h, w]`.
pub fn combine<T: Real>(activation: &Tensor4<T>, alpha: &[f64]) -> Tensor4<f64> {
    let s = activation.shape();
    let mut l = vec![0.0f64; s.plane()];
    for (k, &a) in alpha.iter().enumerate() {
        for (o, v) in l.iter_mut().zip(activation.plane(0, k)) {
            *o += a * v.as_f64();
        }
    }
    let data = l.into_iter().map(|v| v.max(0.0)).collect();
    Tensor4::from_vec([1, 1, s.h, s.w], data).expect("finite combination")
}

fn finish(l: Tensor4<f64>, alpha: Vec<f64>, h: usize, w: usize, target: &str) -> Result<Heatmap> {
    let up = resize_bilinear(&l, h, w)?;
    let raw_max = up.data().iter().copied().fold(0.0f64, f64::max);
    let values = if raw_max > 0.0 {
        up.map(|v| (v / raw_max).clamp(0.0, 1.0)).cast::<f32>()
    } else {
        Tensor4::zeros([1, 1, h, w])
    };
    Ok(Heatmap {
        values,
        target: target.to_string(),
        raw_max,
        alpha,
        coarse: l,
    })
}

fn check_targets<T: Real>(model: &Model<T>, targets: &[String]) -> Result<()> {
    let valid = model.explain_targets();
    for t in targets {
        if valid.contains(t) {
            continue;
        }
        if t.ends_with(".dsc_path") || t.ends_with(".shortcut") {
            if let Some(base) = t.rsplit_once('.').map(|(b, _)| b.to_string()) {
                if valid.contains(&base) {
                    return Err(Error::Usage(format!(
                        "target {t} needs a residual block, but this {} model has no shortcuts",
                        model.config().variant
                    )));
                }
            }
        }
        return Err(Error::Usage(format!(
            "unknown explain target {t:?}; valid targets: {}",
            valid.join(", ")
        )));
    }
    Ok(())
}

/// Heatmaps for several layers from a single forward/backward pass.
pub fn grad_cam_many<T: Real>(
    model: &Model<T>,
    x: &Tensor4<T>,
    targets: &[String],
    meta: &UnitMeta,
    opts: &GradCamOptions,
) -> Result<Vec<Heatmap>> {
    check_targets(model, targets)?;
    let xs = x.shape();
    if xs.n != 1 {
        return Err(Error::Usage(format!("grad_cam needs a single input window, got {xs}")));
    }
    let probe = Probe::new(targets);
    let g = Graph::new();
    let count = {
        let ctx = Ctx::new(&g, &model.store, Mode::Eval).with_probe(&probe);
        let y = model.forward(&ctx, &g.constant(x.clone()))?;
        let (score, count) = rain_score(&g, &y, meta, opts)?;
        if count > 0 {
            g.backward(&score)?;
        }
        count
    };
    let captured = probe.into_captured();
    targets
        .iter()
        .map(|t| {
            let a = &captured[t];
            let grad = if count > 0 { g.grad(a) } else { None };
            let alpha = match grad {
                Some(gr) => channel_weights(&gr),
                None => vec![0.0; a.shape().c],
            };
            finish(combine(a.value(), &alpha), alpha, xs.h, xs.w, t)
        })
        .collect()
}

pub fn grad_cam<T: Real>(
    model: &Model<T>,
    x: &Tensor4<T>,
    target: &str,
    meta: &UnitMeta,
    opts: &GradCamOptions,
) -> Result<Heatmap> {
    Ok(grad_cam_many(model, x, &[target.to_string()], meta, opts)?.remove(0))
}

/// Every explainable layer in figure order: encoder depths 0..4 as
/// (block, dsc_path, shortcut, cbam), then decoder depths 3..0 as
/// (block, dsc_path, shortcut). Needs the residual variant.
pub fn explain_suite<T: Real>(
    model: &Model<T>,
    x: &Tensor4<T>,
    meta: &UnitMeta,
    opts: &GradCamOptions,
) -> Result<Vec<Heatmap>> {
    if model.config().variant != crate::model::Variant::Sar {
        return Err(Error::Usage(
            "the explain suite needs residual blocks; this model has no shortcuts".into(),
        ));
    }
    grad_cam_many(model, x, &model.explain_targets(), meta, opts)
}

/// Where a layer sits in the figure grid: `(section, depth, column)`.
pub fn grid_position(target: &str) -> Option<(&'static str, usize, &'static str)> {
    let (head, rest) = target.split_once('.')?;
    let (section, depth) = if let Some(d) = head.strip_prefix("enc") {
        ("encoder", d.parse().ok()?)
    } else if let Some(d) = head.strip_prefix("dec") {
        ("decoder", d.parse().ok()?)
    } else {
        return None;
    };
    let column = match rest {
        "block" => "block",
        "block.dsc_path" => "dsc_path",
        "block.shortcut" => "shortcut",
        "cbam" if section == "encoder" => "cbam",
        _ => return None,
    };
    Some((section, depth, column))
}

/// 256-entry jet colour map: for `t = i / 255`,
/// `r = clamp(1.5 - |4t - 3|)`, `g = clamp(1.5 - |4t - 2|)`,
/// `b = clamp(1.5 - |4t - 1|)`, scaled to bytes with rounding.
pub fn colormap() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    for (i, e) in table.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
        *e = [ch(3.0), ch(2.0), ch(1.0)];
    }
    table
}

/// Binary PPM (P6) rendering of a heatmap through [`colormap`].
pub fn write_ppm<W: Write>(w: &mut W, map: &Heatmap) -> Result<()> {
    let s = map.values.shape();
    let table = colormap();
    let mut buf = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    for &v in map.values.data() {
        let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
        buf.extend_from_slice(&table[i]);
    }
    w.write_all(&buf)?;
    Ok(())
}
