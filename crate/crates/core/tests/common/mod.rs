//! Reference implementations shared by the integration tests. None of
//! these call into the library's numeric kernels.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nowcast::model::{ModelConfig, Variant};
use nowcast::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

/// Relative error with a floor on the denominator, so that two values
/// that are both essentially zero compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

/// Grouped 2-D cross-correlation by explicit loops over
/// (n, cout, oy, ox, ci, ky, kx).
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, cpg, kh, kw] = ws;
    assert_eq!(cin / groups, cpg);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let opg = cout / groups;
    let mut y = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for co in 0..cout {
            let g = co / opg;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bb| bb[co]);
                    for ci in 0..cpg {
                        let c = g * cpg + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((co * cpg + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    y[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, [n, cout, ho, wo])
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(mut f: impl FnMut(&Tensor4<f64>) -> f64, x: &Tensor4<f64>, i: usize, h: f64) -> f64 {
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let fp = f(&p);
    p.data_mut()[i] -= 2.0 * h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// (tp, tn, fp, fn) by a per-pixel loop.
pub fn loop_confusion(pred: &[u8], target: &[u8]) -> [u64; 4] {
    let mut c = [0u64; 4];
    for (&p, &t) in pred.iter().zip(target) {
        match (p, t) {
            (1, 1) => c[0] += 1,
            (0, 0) => c[1] += 1,
            (1, 0) => c[2] += 1,
            _ => c[3] += 1,
        }
    }
    c
}

/// (precision, recall, accuracy, f1) with 0 for empty denominators.
pub fn loop_scores(c: [u64; 4]) -> [f64; 4] {
    let [tp, tn, fp, fn_] = c.map(|v| v as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    [p, r, div(tp + tn, tp + tn + fp + fn_), div(2.0 * p * r, p + r)]
}

fn dsc(cin: usize, cout: usize) -> usize {
    cin * 9 + cout * cin + cout
}

fn bn(c: usize) -> usize {
    2 * c
}

fn pointwise(cin: usize, cout: usize) -> usize {
    cin * cout + cout
}

fn cbam(c: usize, r: usize, k: usize) -> usize {
    let hidden = c / r;
    pointwise(c, hidden) + pointwise(hidden, c) + 2 * k * k + 1
}

/// Trainable parameters per named component, enumerated field by field
/// from the architecture description.
pub fn enumerate_params(cfg: &ModelConfig) -> BTreeMap<String, usize> {
    let b = cfg.base_channels;
    let sar = cfg.variant == Variant::Sar;
    let widths: Vec<usize> = if sar {
        vec![b, 2 * b, 4 * b, 8 * b, 16 * b]
    } else {
        vec![b, 2 * b, 4 * b, 8 * b, 8 * b]
    };
    let mut m = BTreeMap::new();
    let mut cin = cfg.in_channels;
    for (i, &c) in widths.iter().enumerate() {
        m.insert(format!("enc{i}.block.dsc"), dsc(cin, c) + bn(c) + dsc(c, c) + bn(c));
        if sar {
            m.insert(format!("enc{i}.block.shortcut"), pointwise(cin, c));
        }
        m.insert(format!("enc{i}.cbam"), cbam(c, cfg.cbam_reduction, cfg.spatial_kernel));
        cin = c;
    }
    let mut below = widths[4];
    for k in (0..4).rev() {
        let (bin, mid, bout) = if sar {
            m.insert(format!("dec{k}.reduce"), pointwise(below, below / 2));
            below /= 2;
            (widths[k] + below, widths[k], widths[k])
        } else {
            let bin = widths[k] + below;
            (bin, bin / 2, if k == 0 { widths[0] } else { widths[k - 1] })
        };
        m.insert(
            format!("dec{k}.block.dsc"),
            dsc(bin, mid) + bn(mid) + dsc(mid, bout) + bn(bout),
        );
        if sar {
            m.insert(format!("dec{k}.block.shortcut"), pointwise(bin, bout));
        }
        below = bout;
    }
    m.insert("out".into(), pointwise(below, cfg.out_channels));
    m
}

pub fn enumerate_total(cfg: &ModelConfig) -> usize {
    enumerate_params(cfg).values().sum()
}

/// A standard UNet with the same widths, built from dense bias-free 3×3
/// double convolutions with batch norm, 2×2 transposed-convolution
/// upsampling and a 1×1 output layer.
pub fn dense_unet_params(in_ch: usize, out_ch: usize, b: usize) -> usize {
    let double = |cin: usize, cout: usize| 9 * cin * cout + bn(cout) + 9 * cout * cout + bn(cout);
    let widths = [b, 2 * b, 4 * b, 8 * b, 16 * b];
    let mut total = 0;
    let mut cin = in_ch;
    for &c in &widths {
        total += double(cin, c);
        cin = c;
    }
    for k in (0..4).rev() {
        let up_in = widths[k + 1];
        total += 4 * up_in * widths[k] + widths[k];
        total += double(2 * widths[k], widths[k]);
    }
    total + pointwise(b, out_ch)
}

/// Half-pixel bilinear resize of one `h × w` plane with edge clamping:
/// output pixel `d` samples input coordinate `(d + 0.5) · in / out − 0.5`.
pub fn bilinear_oracle(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let tap = |d: usize, inn: usize, out: usize| {
        let s = ((d as f64 + 0.5) * inn as f64 / out as f64 - 0.5).clamp(0.0, (inn - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(inn - 1), s - i0 as f64)
    };
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let (y0, y1, ty) = tap(y, h, oh);
        for x in 0..ow {
            let (x0, x1, tx) = tap(x, w, ow);
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[y * ow + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Pearson correlation; `None` when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Rain mask for raw hundredths of a millimetre per `interval` minutes:
/// rate in mm/h is `raw / 100 · 60 / interval`.
pub fn rain_mask(normalised: &[f64], scale: f64, interval: f64, threshold_mm_h: f64) -> Vec<f64> {
    normalised
        .iter()
        .map(|&v| {
            if v * scale / 100.0 * (60.0 / interval) >= threshold_mm_h {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
