//! Non-convolution kernels: normalisation, pooling, resampling, broadcasting.

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::real::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

// ---------------------------------------------------------------------------
// Batch normalisation

/// Values saved by a batch-norm forward for its backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and biased batch variance (train mode only).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn per_channel<T: Real>(op: &'static str, v: &[T], c: usize, what: &str) -> Result<()> {
    if v.len() != c {
        return Err(Error::dim(
            op,
            format!("{what} has length {}, input has {c} channels", v.len()),
        ));
    }
    Ok(())
}

/// Train mode normalises with biased batch statistics over `(n, h, w)`;
/// eval mode uses the supplied running statistics.
pub fn batch_norm_forward<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running: (&[T], &[T]),
    train: bool,
    eps: f64,
) -> Result<(Tensor4<T>, BnSaved<T>)> {
    let s = x.shape();
    for (v, what) in [
        (gamma, "gamma"),
        (beta, "beta"),
        (running.0, "running mean"),
        (running.1, "running var"),
    ] {
        per_channel("batch_norm", v, s.c, what)?;
    }
    let m = s.n * s.plane();
    if train && m < 2 {
        return Err(Error::dim(
            "batch_norm",
            format!("train mode needs n*h*w >= 2, got {m} for {s}"),
        ));
    }
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    if train {
        for c in 0..s.c {
            let mut acc = 0.0;
            for n in 0..s.n {
                acc += x.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            mean[c] = acc / m as f64;
            let mut sq = 0.0;
            for n in 0..s.n {
                sq += x
                    .plane(n, c)
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mean[c];
                        d * d
                    })
                    .sum::<f64>();
            }
            var[c] = sq / m as f64;
        }
    } else {
        for c in 0..s.c {
            mean[c] = running.0[c].as_f64();
            var[c] = running.1[c].as_f64();
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let mut xhat = vec![T::zero(); s.numel()];
    let mut y = vec![T::zero(); s.numel()];
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            for i in base..base + p {
                let h = (x.data()[i] - mean_t[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    let saved = BnSaved {
        xhat: Tensor4::from_raw(s, xhat),
        inv_std,
        batch_mean: if train { mean_t } else { Vec::new() },
        batch_var: if train {
            var.iter().map(|&v| T::from_f64_lossy(v)).collect()
        } else {
            Vec::new()
        },
    };
    Ok((Tensor4::from_raw(s, y), saved))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(
    dy: &Tensor4<T>,
    gamma: &[T],
    saved: &BnSaved<T>,
    train: bool,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let s = dy.shape();
    let p = s.plane();
    let m = (s.n * p) as f64;
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut sum_dxhat = vec![0.0f64; s.c];
    let mut sum_dxhat_xhat = vec![0.0f64; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            for i in base..base + p {
                let g = dy.data()[i];
                let h = saved.xhat.data()[i];
                dgamma[c] += g * h;
                dbeta[c] += g;
                let dh = (g * gamma[c]).as_f64();
                sum_dxhat[c] += dh;
                sum_dxhat_xhat[c] += dh * h.as_f64();
            }
        }
    }
    let mut dx = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            let inv = saved.inv_std[c];
            if train {
                let mean_dh = T::from_f64_lossy(sum_dxhat[c] / m);
                let mean_dhh = T::from_f64_lossy(sum_dxhat_xhat[c] / m);
                for i in base..base + p {
                    let dh = dy.data()[i] * gamma[c];
                    dx[i] = inv * (dh - mean_dh - saved.xhat.data()[i] * mean_dhh);
                }
            } else {
                for i in base..base + p {
                    dx[i] = dy.data()[i] * gamma[c] * inv;
                }
            }
        }
    }
    (Tensor4::from_raw(s, dx), dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Broadcasting

/// How the second operand of [`mul_broadcast`] spreads over the first.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// `[n, c, h, w]`
    Full,
    /// `[n, c, 1, 1]`, one factor per channel.
    PerChannel,
    /// `[n, 1, h, w]`, one factor per pixel.
    PerPixel,
}

pub fn broadcast_kind(a: Shape4, b: Shape4) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Full);
    }
    if b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1 {
        return Ok(Broadcast::PerChannel);
    }
    if b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w {
        return Ok(Broadcast::PerPixel);
    }
    Err(Error::dim("mul_broadcast", format!("cannot broadcast {b} over {a}")))
}

#[inline]
fn b_index(kind: Broadcast, s: Shape4, n: usize, c: usize, i: usize) -> usize {
    match kind {
        Broadcast::Full => (n * s.c + c) * s.plane() + i,
        Broadcast::PerChannel => n * s.c + c,
        Broadcast::PerPixel => n * s.plane() + i,
    }
}

pub fn mul_broadcast<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = a.shape();
    let kind = broadcast_kind(s, b.shape())?;
    let p = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            for i in 0..p {
                out[base + i] = a.data()[base + i] * b.data()[b_index(kind, s, n, c, i)];
            }
        }
    }
    Ok(Tensor4::from_raw(s, out))
}

/// Returns `(da, db)` for `a ⊙ broadcast(b)`.
pub fn mul_broadcast_backward<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, dy: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    let s = a.shape();
    let kind = broadcast_kind(s, b.shape()).expect("validated in forward");
    let p = s.plane();
    let mut da = vec![T::zero(); s.numel()];
    let mut db = vec![T::zero(); b.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * p;
            for i in 0..p {
                let bi = b_index(kind, s, n, c, i);
                let g = dy.data()[base + i];
                da[base + i] = g * b.data()[bi];
                db[bi] += g * a.data()[base + i];
            }
        }
    }
    (Tensor4::from_raw(s, da), Tensor4::from_raw(b.shape(), db))
}

pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::dim(
            "concat_channels",
            format!("{sa} and {sb} differ outside the channel axis"),
        ));
    }
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    for n in 0..sa.n {
        data.extend_from_slice(a.sample_slice(n));
        data.extend_from_slice(b.sample_slice(n));
    }
    Ok(Tensor4::from_raw(sa.with_c(sa.c + sb.c), data))
}

// ---------------------------------------------------------------------------
// Pooling and resampling

/// 2x2 max pooling. Returns the output and, per output element, the flat
/// input index of the maximum (first in row-major scan order on ties).
pub fn max_pool2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::dim(
            "max_pool2",
            format!("height and width must be even, got {s}"),
        ));
    }
    let os = Shape4::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = x.index(n, c, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(n, c, 2 * oy + dy, 2 * ox + dx);
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    out.push(x.data()[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor4::from_raw(os, out), arg))
}

pub fn max_pool2_backward<T: Real>(in_shape: Shape4, argmax: &[usize], dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(in_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// Source taps for one output coordinate of a half-pixel-centred bilinear
/// resize: `src = (dst + 0.5) * in/out - 0.5`, clamped at 0.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    /// Weight of `i1`; `i0` gets `1 - frac`.
    pub frac: f64,
}

pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

pub fn resize_bilinear<T: Real>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize_bilinear", "output size must be >= 1"));
    }
    let ty = bilinear_taps(s.h, out_h);
    let tx = bilinear_taps(s.w, out_w);
    let os = Shape4::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for yt in &ty {
                let fy = T::from_f64_lossy(yt.frac);
                let gy = T::one() - fy;
                for xt in &tx {
                    let fx = T::from_f64_lossy(xt.frac);
                    let gx = T::one() - fx;
                    let v00 = plane[yt.i0 * s.w + xt.i0];
                    let v01 = plane[yt.i0 * s.w + xt.i1];
                    let v10 = plane[yt.i1 * s.w + xt.i0];
                    let v11 = plane[yt.i1 * s.w + xt.i1];
                    out.push(gy * (gx * v00 + fx * v01) + fy * (gx * v10 + fx * v11));
                }
            }
        }
    }
    Ok(Tensor4::from_raw(os, out))
}

pub fn resize_bilinear_backward<T: Real>(in_shape: Shape4, dy: &Tensor4<T>) -> Tensor4<T> {
    let s = in_shape;
    let os = dy.shape();
    let ty = bilinear_taps(s.h, os.h);
    let tx = bilinear_taps(s.w, os.w);
    let mut dx = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let plane = dx.plane_mut(n, c);
            let mut k = 0;
            for yt in &ty {
                let fy = T::from_f64_lossy(yt.frac);
                let gy = T::one() - fy;
                for xt in &tx {
                    let fx = T::from_f64_lossy(xt.frac);
                    let gx = T::one() - fx;
                    let v = g[k];
                    k += 1;
                    plane[yt.i0 * s.w + xt.i0] += gy * gx * v;
                    plane[yt.i0 * s.w + xt.i1] += gy * fx * v;
                    plane[yt.i1 * s.w + xt.i0] += fy * gx * v;
                    plane[yt.i1 * s.w + xt.i1] += fy * fx * v;
                }
            }
        }
    }
    dx
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    /// Pool over `(h, w)`, producing `[n, c, 1, 1]`.
    Spatial,
    /// Pool over `c`, producing `[n, 1, h, w]`.
    Channel,
}

/// Global average or max pooling. For max pooling the flat argmax input
/// index of every output element is returned (first index on ties).
pub fn global_pool<T: Real>(x: &Tensor4<T>, kind: PoolKind, axis: PoolAxis) -> (Tensor4<T>, Option<Vec<usize>>) {
    let s = x.shape();
    let p = s.plane();
    match axis {
        PoolAxis::Spatial => {
            let os = Shape4::new(s.n, s.c, 1, 1);
            let mut out = Vec::with_capacity(os.numel());
            let mut arg = Vec::new();
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * p;
                    let plane = &x.data()[base..base + p];
                    match kind {
                        PoolKind::Avg => {
                            let sum: f64 = plane.iter().map(|v| v.as_f64()).sum();
                            out.push(T::from_f64_lossy(sum / p as f64));
                        }
                        PoolKind::Max => {
                            let mut best = 0;
                            for (i, v) in plane.iter().enumerate() {
                                if *v > plane[best] {
                                    best = i;
                                }
                            }
                            out.push(plane[best]);
                            arg.push(base + best);
                        }
                    }
                }
            }
            let out = Tensor4::from_raw(os, out);
            (out, (kind == PoolKind::Max).then_some(arg))
        }
        PoolAxis::Channel => {
            let os = Shape4::new(s.n, 1, s.h, s.w);
            let mut out = Vec::with_capacity(os.numel());
            let mut arg = Vec::new();
            for n in 0..s.n {
                for i in 0..p {
                    match kind {
                        PoolKind::Avg => {
                            let mut sum = 0.0f64;
                            for c in 0..s.c {
                                sum += x.data()[(n * s.c + c) * p + i].as_f64();
                            }
                            out.push(T::from_f64_lossy(sum / s.c as f64));
                        }
                        PoolKind::Max => {
                            let mut best = n * s.c * p + i;
                            for c in 1..s.c {
                                let j = (n * s.c + c) * p + i;
                                if x.data()[j] > x.data()[best] {
                                    best = j;
                                }
                            }
                            out.push(x.data()[best]);
                            arg.push(best);
                        }
                    }
                }
            }
            let out = Tensor4::from_raw(os, out);
            (out, (kind == PoolKind::Max).then_some(arg))
        }
    }
}

pub fn global_pool_backward<T: Real>(
    in_shape: Shape4,
    kind: PoolKind,
    axis: PoolAxis,
    argmax: Option<&[usize]>,
    dy: &Tensor4<T>,
) -> Tensor4<T> {
    let s = in_shape;
    let p = s.plane();
    let mut dx = Tensor4::zeros(s);
    match kind {
        PoolKind::Max => {
            let arg = argmax.expect("max pooling keeps its argmax");
            for (&i, &g) in arg.iter().zip(dy.data()) {
                dx.data_mut()[i] += g;
            }
        }
        PoolKind::Avg => {
            let (count, d) = match axis {
                PoolAxis::Spatial => (p, dx.data_mut()),
                PoolAxis::Channel => (s.c, dx.data_mut()),
            };
            let inv = T::one() / T::from_usize_lossy(count);
            for n in 0..s.n {
                for c in 0..s.c {
                    for i in 0..p {
                        let g = match axis {
                            PoolAxis::Spatial => dy.data()[n * s.c + c],
                            PoolAxis::Channel => dy.data()[n * p + i],
                        };
                        d[(n * s.c + c) * p + i] = g * inv;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_taps_follow_half_pixel_rule() {
        let x = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = resize_bilinear(&x, 2, 4).unwrap();
        assert_eq!(y.plane(0, 0), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
        let one = Tensor4::<f32>::full([1, 1, 1, 1], 3.5);
        assert_eq!(resize_bilinear(&one, 2, 2).unwrap().data(), &[3.5; 4]);
    }

    #[test]
    fn max_pool_first_index_on_ties() {
        let x = Tensor4::<f32>::full([1, 1, 2, 2], 1.0);
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[1.0]);
        assert_eq!(arg, vec![0]);
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(max_pool2(&x).unwrap().0.data(), &[4.0]);
        assert!(max_pool2(&Tensor4::<f32>::zeros([1, 1, 3, 2])).is_err());
    }

    #[test]
    fn channel_max_picks_per_pixel() {
        // channel 0 = [1, 2], channel 1 = [3, 0]
        let x = Tensor4::<f32>::from_vec([1, 2, 1, 2], vec![1., 2., 3., 0.]).unwrap();
        let (y, _) = global_pool(&x, PoolKind::Max, PoolAxis::Channel);
        assert_eq!(y.data(), &[3.0, 2.0]);
        let (avg, _) = global_pool(&x, PoolKind::Avg, PoolAxis::Channel);
        assert_eq!(avg.data(), &[2.0, 1.0]);
    }

    #[test]
    fn batch_norm_shape_checks() {
        let x = Tensor4::<f32>::zeros([2, 3, 2, 2]);
        let g = [1.0f32; 2];
        let b = [0.0f32; 3];
        assert!(batch_norm_forward(&x, &g, &b, (&b, &b), true, BN_EPS).is_err());
        let single = Tensor4::<f32>::zeros([1, 1, 1, 1]);
        let one = [1.0f32];
        assert!(batch_norm_forward(&single, &one, &one, (&one, &one), true, BN_EPS).is_err());
        assert!(batch_norm_forward(&single, &one, &one, (&one, &one), false, BN_EPS).is_ok());
    }

    #[test]
    fn broadcast_rules() {
        let a = Shape4::new(2, 3, 4, 4);
        assert_eq!(
            broadcast_kind(a, Shape4::new(2, 3, 1, 1)).unwrap(),
            Broadcast::PerChannel
        );
        assert_eq!(broadcast_kind(a, Shape4::new(2, 1, 4, 4)).unwrap(), Broadcast::PerPixel);
        assert_eq!(broadcast_kind(a, a).unwrap(), Broadcast::Full);
        assert!(broadcast_kind(a, Shape4::new(1, 3, 1, 1)).is_err());
    }
}
