//! 2-D grouped convolution, forward and backward.
//!
//! Two algorithms are provided. [`ConvAlgo::Direct`] is the plain nested loop
//! and serves as the reference. [`ConvAlgo::Fast`] dispatches to a stencil
//! kernel for depthwise convolutions, a straight matrix multiply for 1x1
//! convolutions and im2col + matrix multiply otherwise. The fast path is
//! parallel over samples; every reduction across samples happens in sample
//! order so results do not depend on the thread count.

use rayon::prelude::*;

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::real::{gemm, Real, Strides};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvGeom {
    pub fn padded(padding: usize) -> Self {
        ConvGeom {
            padding,
            ..Default::default()
        }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvGeom { groups, ..self }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        ConvGeom { stride, ..self }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    #[default]
    Fast,
    Direct,
}

/// Validates operand shapes and returns the output shape.
pub fn output_shape(x: Shape4, w: Shape4, geom: ConvGeom) -> Result<Shape4> {
    let g = geom.groups;
    if g == 0 || geom.stride == 0 {
        return Err(Error::Config(format!(
            "conv2d: groups ({g}) and stride ({}) must be >= 1",
            geom.stride
        )));
    }
    if x.c % g != 0 || w.n % g != 0 {
        return Err(Error::dim(
            "conv2d",
            format!("cin {} and cout {} must be divisible by groups {g}", x.c, w.n),
        ));
    }
    if w.c != x.c / g {
        return Err(Error::dim(
            "conv2d",
            format!(
                "weight {w} expects {} input channels per group, input {x} has {}",
                w.c,
                x.c / g
            ),
        ));
    }
    let span = |len: usize, k: usize, axis: &str| -> Result<usize> {
        let padded = len + 2 * geom.padding;
        if padded < k {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {k} larger than padded {axis} {padded}"),
            ));
        }
        if (padded - k) % geom.stride != 0 {
            return Err(Error::Config(format!(
                "conv2d: output {axis} ({padded} - {k}) / {} is not integral",
                geom.stride
            )));
        }
        Ok((padded - k) / geom.stride + 1)
    };
    let ho = span(x.h, w.h, "height")?;
    let wo = span(x.w, w.w, "width")?;
    Ok(Shape4::new(x.n, w.n, ho, wo))
}

fn check_bias<T>(bias: Option<&[T]>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != cout => Err(Error::dim(
            "conv2d",
            format!("bias length {} does not match cout {cout}", b.len()),
        )),
        _ => Ok(()),
    }
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    geom: ConvGeom,
    algo: ConvAlgo,
) -> Result<Tensor4<T>> {
    let ys = output_shape(x.shape(), w.shape(), geom)?;
    check_bias(bias, ys.c)?;
    Ok(match algo {
        ConvAlgo::Direct => direct_forward(x, w, bias, geom, ys),
        ConvAlgo::Fast => fast_forward(x, w, bias, geom, ys),
    })
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// Present only when requested.
    pub input: Option<Tensor4<T>>,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    geom: ConvGeom,
    algo: ConvAlgo,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let ys = output_shape(x.shape(), w.shape(), geom)?;
    if dy.shape() != ys {
        return Err(Error::dim(
            "conv2d_backward",
            format!("upstream gradient {} does not match output {ys}", dy.shape()),
        ));
    }
    Ok(match algo {
        ConvAlgo::Direct => direct_backward(x, w, dy, geom, need_input),
        ConvAlgo::Fast => fast_backward(x, w, dy, geom, need_input),
    })
}

// ---------------------------------------------------------------------------
// Direct reference loops

fn direct_forward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    geom: ConvGeom,
    ys: Shape4,
) -> Tensor4<T> {
    let xs = x.shape();
    let ws = w.shape();
    let cin_g = ws.c;
    let cout_g = ys.c / geom.groups;
    let p = geom.padding as isize;
    let mut out = vec![T::zero(); ys.numel()];
    let mut i = 0;
    for n in 0..ys.n {
        for o in 0..ys.c {
            let grp = o / cout_g;
            for oy in 0..ys.h {
                for ox in 0..ys.w {
                    let mut acc = bias.map_or(T::zero(), |b| b[o]);
                    for ci in 0..cin_g {
                        let ic = grp * cin_g + ci;
                        for ky in 0..ws.h {
                            let iy = (oy * geom.stride + ky) as isize - p;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..ws.w {
                                let ix = (ox * geom.stride + kx) as isize - p;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(o, ci, ky, kx) * x.at(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[i] = acc;
                    i += 1;
                }
            }
        }
    }
    Tensor4::from_raw(ys, out)
}

fn direct_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    geom: ConvGeom,
    need_input: bool,
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = w.shape();
    let ys = dy.shape();
    let cin_g = ws.c;
    let cout_g = ys.c / geom.groups;
    let p = geom.padding as isize;
    let mut dx = Tensor4::zeros(xs);
    let mut dw = Tensor4::zeros(ws);
    let mut db = vec![T::zero(); ys.c];
    for n in 0..ys.n {
        for o in 0..ys.c {
            let grp = o / cout_g;
            for oy in 0..ys.h {
                for ox in 0..ys.w {
                    let g = dy.at(n, o, oy, ox);
                    db[o] += g;
                    for ci in 0..cin_g {
                        let ic = grp * cin_g + ci;
                        for ky in 0..ws.h {
                            let iy = (oy * geom.stride + ky) as isize - p;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..ws.w {
                                let ix = (ox * geom.stride + kx) as isize - p;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                let wi = dw.index(o, ci, ky, kx);
                                dw.data_mut()[wi] += g * x.at(n, ic, iy, ix);
                                if need_input {
                                    let xi = dx.index(n, ic, iy, ix);
                                    dx.data_mut()[xi] += g * w.at(o, ci, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: need_input.then_some(dx),
        weight: dw,
        bias: db,
    }
}

// ---------------------------------------------------------------------------
// Fast path

#[derive(Copy, Clone)]
struct Plan {
    xs: Shape4,
    ws: Shape4,
    ys: Shape4,
    geom: ConvGeom,
    cin_g: usize,
    cout_g: usize,
}

impl Plan {
    fn new(xs: Shape4, ws: Shape4, ys: Shape4, geom: ConvGeom) -> Self {
        Plan {
            xs,
            ws,
            ys,
            geom,
            cin_g: ws.c,
            cout_g: ys.c / geom.groups,
        }
    }

    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn pointwise(&self) -> bool {
        self.ws.h == 1 && self.ws.w == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    /// Rows of the im2col matrix for one group.
    fn k(&self) -> usize {
        self.cin_g * self.ws.h * self.ws.w
    }

    /// Output pixels per plane.
    fn l(&self) -> usize {
        self.ys.h * self.ys.w
    }

    /// Range of output columns whose input column `ox*s + k - p` is in bounds.
    fn valid_out(&self, k: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let s = self.geom.stride;
        let p = self.geom.padding;
        // ox*s + k >= p
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // ox*s + k - p <= in_len - 1
        let hi = if in_len + p > k {
            ((in_len + p - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// One sample, one group: unfold `[cin_g, h, w]` into `[K, L]`.
fn im2col<T: Real>(plan: &Plan, x_sample: &[T], grp: usize, col: &mut [T]) {
    let Plan {
        xs,
        ws,
        ys,
        geom,
        cin_g,
        ..
    } = *plan;
    let l = plan.l();
    let s = geom.stride;
    for ci in 0..cin_g {
        let ic = grp * cin_g + ci;
        let plane = &x_sample[ic * xs.plane()..(ic + 1) * xs.plane()];
        for ky in 0..ws.h {
            let (y_lo, y_hi) = plan.valid_out(ky, ys.h, xs.h);
            for kx in 0..ws.w {
                let (x_lo, x_hi) = plan.valid_out(kx, ys.w, xs.w);
                let row = (ci * ws.h + ky) * ws.w + kx;
                let dst = &mut col[row * l..(row + 1) * l];
                dst.fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - geom.padding;
                    let src = &plane[iy * xs.w..(iy + 1) * xs.w];
                    let drow = &mut dst[oy * ys.w..(oy + 1) * ys.w];
                    for ox in x_lo..x_hi {
                        drow[ox] = src[ox * s + kx - geom.padding];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `[K, L]` back into `[cin_g, h, w]`.
fn col2im<T: Real>(plan: &Plan, col: &[T], grp: usize, dx_sample: &mut [T]) {
    let Plan {
        xs,
        ws,
        ys,
        geom,
        cin_g,
        ..
    } = *plan;
    let l = plan.l();
    let s = geom.stride;
    for ci in 0..cin_g {
        let ic = grp * cin_g + ci;
        let plane = &mut dx_sample[ic * xs.plane()..(ic + 1) * xs.plane()];
        for ky in 0..ws.h {
            let (y_lo, y_hi) = plan.valid_out(ky, ys.h, xs.h);
            for kx in 0..ws.w {
                let (x_lo, x_hi) = plan.valid_out(kx, ys.w, xs.w);
                let row = (ci * ws.h + ky) * ws.w + kx;
                let src = &col[row * l..(row + 1) * l];
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - geom.padding;
                    let srow = &src[oy * ys.w..(oy + 1) * ys.w];
                    let drow = &mut plane[iy * xs.w..(iy + 1) * xs.w];
                    for ox in x_lo..x_hi {
                        drow[ox * s + kx - geom.padding] += srow[ox];
                    }
                }
            }
        }
    }
}

fn fast_forward<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, bias: Option<&[T]>, geom: ConvGeom, ys: Shape4) -> Tensor4<T> {
    let plan = Plan::new(x.shape(), w.shape(), ys, geom);
    let out_len = ys.c * plan.l();
    let mut out = vec![T::zero(); ys.numel()];
    out.par_chunks_mut(out_len).enumerate().for_each(|(n, out_n)| {
        let xn = x.sample_slice(n);
        forward_sample(&plan, xn, w.data(), bias, out_n);
    });
    Tensor4::from_raw(ys, out)
}

fn forward_sample<T: Real>(plan: &Plan, xn: &[T], w: &[T], bias: Option<&[T]>, out_n: &mut [T]) {
    let Plan {
        xs,
        ws,
        ys,
        geom,
        cin_g,
        cout_g,
    } = *plan;
    let l = plan.l();
    if let Some(b) = bias {
        for (o, chunk) in out_n.chunks_mut(l).enumerate() {
            chunk.fill(b[o]);
        }
    }
    if plan.depthwise() {
        let kk = ws.h * ws.w;
        let s = geom.stride;
        for c in 0..ys.c {
            let src = &xn[c * xs.plane()..(c + 1) * xs.plane()];
            let dst = &mut out_n[c * l..(c + 1) * l];
            let wc = &w[c * kk..(c + 1) * kk];
            for ky in 0..ws.h {
                let (y_lo, y_hi) = plan.valid_out(ky, ys.h, xs.h);
                for kx in 0..ws.w {
                    let (x_lo, x_hi) = plan.valid_out(kx, ys.w, xs.w);
                    if x_lo == x_hi {
                        continue;
                    }
                    let wv = wc[ky * ws.w + kx];
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - geom.padding;
                        let srow = &src[iy * xs.w..(iy + 1) * xs.w];
                        let drow = &mut dst[oy * ys.w..(oy + 1) * ys.w];
                        if s == 1 {
                            let off = kx as isize - geom.padding as isize;
                            let sx = (x_lo as isize + off) as usize;
                            let n = x_hi - x_lo;
                            for (d, &v) in drow[x_lo..x_hi].iter_mut().zip(&srow[sx..sx + n]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                drow[ox] += wv * srow[ox * s + kx - geom.padding];
                            }
                        }
                    }
                }
            }
        }
        return;
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    let k = plan.k();
    let mut col = if plan.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * l]
    };
    for grp in 0..geom.groups {
        let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
        let og = &mut out_n[grp * cout_g * l..(grp + 1) * cout_g * l];
        let b_mat: &[T] = if plan.pointwise() {
            &xn[grp * cin_g * l..(grp + 1) * cin_g * l]
        } else {
            im2col(plan, xn, grp, &mut col);
            &col
        };
        gemm(
            cout_g,
            k,
            l,
            T::one(),
            wg,
            Strides::row_major(k),
            b_mat,
            Strides::row_major(l),
            beta,
            og,
            Strides::row_major(l),
        );
    }
}

struct SampleGrads<T> {
    dx: Option<Vec<T>>,
    dw: Vec<T>,
    db: Vec<T>,
}

fn fast_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    geom: ConvGeom,
    need_input: bool,
) -> ConvGrads<T> {
    let plan = Plan::new(x.shape(), w.shape(), dy.shape(), geom);
    let per_sample: Vec<SampleGrads<T>> = (0..plan.ys.n)
        .into_par_iter()
        .map(|n| backward_sample(&plan, x.sample_slice(n), w.data(), dy.sample_slice(n), need_input))
        .collect();

    // Sample-ordered reduction.
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); plan.ys.c];
    let mut dx = need_input.then(|| Vec::with_capacity(x.numel()));
    for sg in per_sample {
        for (a, b) in dw.iter_mut().zip(&sg.dw) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&sg.db) {
            *a += *b;
        }
        if let (Some(dx), Some(part)) = (dx.as_mut(), sg.dx) {
            dx.extend_from_slice(&part);
        }
    }
    ConvGrads {
        input: dx.map(|d| Tensor4::from_raw(x.shape(), d)),
        weight: Tensor4::from_raw(w.shape(), dw),
        bias: db,
    }
}

fn backward_sample<T: Real>(plan: &Plan, xn: &[T], w: &[T], dyn_: &[T], need_input: bool) -> SampleGrads<T> {
    let Plan {
        xs,
        ws,
        ys,
        geom,
        cin_g,
        cout_g,
    } = *plan;
    let l = plan.l();
    let db: Vec<T> = dyn_.chunks(l).map(|c| c.iter().copied().sum()).collect();
    let mut dw = vec![T::zero(); ws.numel()];
    let mut dx = need_input.then(|| vec![T::zero(); xs.c * xs.plane()]);

    if plan.depthwise() {
        let kk = ws.h * ws.w;
        let s = geom.stride;
        for c in 0..ys.c {
            let src = &xn[c * xs.plane()..(c + 1) * xs.plane()];
            let g = &dyn_[c * l..(c + 1) * l];
            for ky in 0..ws.h {
                let (y_lo, y_hi) = plan.valid_out(ky, ys.h, xs.h);
                for kx in 0..ws.w {
                    let (x_lo, x_hi) = plan.valid_out(kx, ys.w, xs.w);
                    let wi = c * kk + ky * ws.w + kx;
                    let wv = w[wi];
                    let mut acc = T::zero();
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - geom.padding;
                        let grow = &g[oy * ys.w..(oy + 1) * ys.w];
                        let srow = &src[iy * xs.w..(iy + 1) * xs.w];
                        for ox in x_lo..x_hi {
                            acc += grow[ox] * srow[ox * s + kx - geom.padding];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let drow = &mut dx[c * xs.plane() + iy * xs.w..c * xs.plane() + (iy + 1) * xs.w];
                            for ox in x_lo..x_hi {
                                drow[ox * s + kx - geom.padding] += wv * grow[ox];
                            }
                        }
                    }
                    dw[wi] = acc;
                }
            }
        }
        return SampleGrads { dx, dw, db };
    }

    let k = plan.k();
    let mut col = if plan.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * l]
    };
    let mut dcol = if need_input && !plan.pointwise() {
        vec![T::zero(); k * l]
    } else {
        Vec::new()
    };
    for grp in 0..geom.groups {
        let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
        let gg = &dyn_[grp * cout_g * l..(grp + 1) * cout_g * l];
        let dwg = &mut dw[grp * cout_g * k..(grp + 1) * cout_g * k];
        let x_mat: &[T] = if plan.pointwise() {
            &xn[grp * cin_g * l..(grp + 1) * cin_g * l]
        } else {
            im2col(plan, xn, grp, &mut col);
            &col
        };
        // dW_g = dY_g [cout_g, L] x col^T [L, K]
        gemm(
            cout_g,
            l,
            k,
            T::one(),
            gg,
            Strides::row_major(l),
            x_mat,
            Strides::transposed(l),
            T::zero(),
            dwg,
            Strides::row_major(k),
        );
        if let Some(dx) = dx.as_mut() {
            // dcol = W_g^T [K, cout_g] x dY_g [cout_g, L]
            if plan.pointwise() {
                let dxg = &mut dx[grp * cin_g * l..(grp + 1) * cin_g * l];
                gemm(
                    k,
                    cout_g,
                    l,
                    T::one(),
                    wg,
                    Strides::transposed(k),
                    gg,
                    Strides::row_major(l),
                    T::zero(),
                    dxg,
                    Strides::row_major(l),
                );
            } else {
                gemm(
                    k,
                    cout_g,
                    l,
                    T::one(),
                    wg,
                    Strides::transposed(k),
                    gg,
                    Strides::row_major(l),
                    T::zero(),
                    &mut dcol,
                    Strides::row_major(l),
                );
                col2im(plan, &dcol, grp, dx);
            }
        }
    }
    SampleGrads { dx, dw, db }
}
