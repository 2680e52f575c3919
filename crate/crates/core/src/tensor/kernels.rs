//! Convolution and pooling kernels.
//!
//! Every kernel computes each output element with a fixed reduction order
//! (input channel, then kernel row, then kernel column), so results are
//! bit-reproducible run to run. Parallelism only ever distributes whole
//! output planes (or whole weight cells) across threads — never one
//! element's reduction — so the `par` drivers produce bitwise the same
//! tensors as the `seq` drivers.
//!
//! The 3×3 stride-1 case (all convolutions in the models) takes a fused
//! row path: per kernel row, three `mul_add` taps stream over a whole
//! output row at once, which the compiler turns into FMA vector code.
//! Other shapes fall back to a straightforward general path.

use super::{Element, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Geometry / validation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv_geom<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, wcin, k, k2) = w.dims4()?;
    if k != k2 {
        return Err(Error::Shape(format!("non-square kernel {k}x{k2}")));
    }
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv2d input has {cin} channels but weight expects {wcin}"
        )));
    }
    if bias.dims() != [cout] {
        return Err(Error::Shape(format!(
            "conv2d bias dims {:?}, expected [{cout}]",
            bias.dims()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be >= 1".into()));
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {}x{}",
            h + 2 * pad,
            wd + 2 * pad
        )));
    }
    if (h + 2 * pad - k) % stride != 0 || (wd + 2 * pad - k) % stride != 0 {
        return Err(Error::Shape(format!(
            "conv2d output size not integral: input {h}x{wd}, k {k}, stride {stride}, pad {pad}"
        )));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    Ok(ConvGeom { b, cin, h, w: wd, cout, k, stride, pad, oh, ow })
}

/// Geometry for conv_transpose2d. Weight layout is [Cin, Cout, K, K].
pub fn convt_geom<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (b, cin, h, wd) = x.dims4()?;
    let (wcin, cout, k, k2) = w.dims4()?;
    if k != k2 {
        return Err(Error::Shape(format!("non-square kernel {k}x{k2}")));
    }
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv_transpose2d input has {cin} channels but weight expects {wcin}"
        )));
    }
    if bias.dims() != [cout] {
        return Err(Error::Shape(format!(
            "conv_transpose2d bias dims {:?}, expected [{cout}]",
            bias.dims()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv_transpose2d stride must be >= 1".into()));
    }
    let oh_s = (h - 1) * stride + k;
    let ow_s = (wd - 1) * stride + k;
    if oh_s <= 2 * pad || ow_s <= 2 * pad {
        return Err(Error::Shape(format!(
            "conv_transpose2d output collapses: input {h}x{wd}, k {k}, stride {stride}, pad {pad}"
        )));
    }
    let oh = oh_s - 2 * pad;
    let ow = ow_s - 2 * pad;
    Ok(ConvGeom { b, cin, h, w: wd, cout, k, stride, pad, oh, ow })
}

// ---------------------------------------------------------------------------
// Plane scheduling
// ---------------------------------------------------------------------------

/// Runs `f(plane_index, plane_slice)` over equal chunks of `data`.
/// The parallel driver distributes whole chunks; each chunk is produced by
/// exactly one invocation either way, so results are bitwise identical.
fn run_planes<T, F>(data: &mut [T], plane_len: usize, parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert_eq!(data.len() % plane_len.max(1), 0);
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(p, chunk)| f(p, chunk));
        return;
    }
    let _ = parallel;
    for (p, chunk) in data.chunks_mut(plane_len).enumerate() {
        f(p, chunk);
    }
}

// ---------------------------------------------------------------------------
// Row primitives for the fused 3x3 stride-1 path
// ---------------------------------------------------------------------------

/// acc[i] += w0*r[i] + w1*r[i+1] + w2*r[i+2] (valid convolution, pad 0);
/// r.len() == acc.len() + 2. windows + zip keep the hot loop free of
/// bounds checks so it vectorizes.
#[inline(always)]
fn row3_pad0<T: Element>(acc: &mut [T], r: &[T], w0: T, w1: T, w2: T) {
    debug_assert_eq!(r.len(), acc.len() + 2);
    for (a, win) in acc.iter_mut().zip(r.windows(3)) {
        *a = win[2].mul_add(w2, win[1].mul_add(w1, win[0].mul_add(w0, *a)));
    }
}

/// Pad-1 row pass over several consecutive rows at once:
/// acc[r][i] += w0*x[r][i-1] + w1*x[r][i] + w2*x[r][i+1], edge columns
/// dropping the out-of-range tap. Interior columns see exactly the per-row
/// arithmetic; the flat sweep also touches edge columns with wrapped
/// neighbors, so their correct values are computed up front (same tap
/// order) and written back over the contaminated slots. Bitwise identical
/// to a row-by-row loop, but the hot loop spans `rows*w` elements, which
/// keeps short rows vectorized.
#[inline(always)]
fn plane3_pad1<T: Element>(
    acc: &mut [T],
    x: &[T],
    w: usize,
    w0: T,
    w1: T,
    w2: T,
    edges: &mut [T],
) {
    let n = acc.len();
    debug_assert_eq!(x.len(), n);
    debug_assert!(n % w == 0 && w >= 2);
    let rows = n / w;
    for r in 0..rows {
        let b = r * w;
        edges[2 * r] = x[b + 1].mul_add(w2, x[b].mul_add(w1, acc[b]));
        edges[2 * r + 1] = x[b + w - 1].mul_add(w1, x[b + w - 2].mul_add(w0, acc[b + w - 1]));
    }
    for (a, win) in acc[1..n - 1].iter_mut().zip(x.windows(3)) {
        *a = win[2].mul_add(w2, win[1].mul_add(w1, win[0].mul_add(w0, *a)));
    }
    for r in 0..rows {
        acc[r * w] = edges[2 * r];
        acc[r * w + w - 1] = edges[2 * r + 1];
    }
}

/// One (batch, out-channel) output plane of a 3x3 stride-1 convolution,
/// pad 0 or 1. `taps(ci, ky)` returns the three kernel-row weights; this
/// lets the backward-by-input pass reuse the routine with flipped taps.
#[inline(always)]
fn conv_plane_k3<T: Element>(
    acc: &mut [T],
    xp: &[T],
    cin: usize,
    h: usize,
    w: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    taps: impl Fn(usize, usize) -> (T, T, T),
) {
    let mut edges = if pad == 1 { vec![T::zero(); 2 * oh] } else { Vec::new() };
    for ci in 0..cin {
        let xc = &xp[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            let (w0, w1, w2) = taps(ci, ky);
            if pad == 1 {
                // pad 1 stride 1 keeps oh == h and ow == w, so the valid
                // output rows and their input rows are equal-length spans
                let oy_lo = 1usize.saturating_sub(ky);
                let oy_hi = (h + 1 - ky).min(oh);
                if oy_hi > oy_lo {
                    plane3_pad1(
                        &mut acc[oy_lo * ow..oy_hi * ow],
                        &xc[(oy_lo + ky - 1) * w..(oy_hi + ky - 1) * w],
                        w,
                        w0,
                        w1,
                        w2,
                        &mut edges,
                    );
                }
            } else {
                for oy in 0..oh {
                    let iy = oy + ky;
                    row3_pad0(
                        &mut acc[oy * ow..(oy + 1) * ow],
                        &xc[iy * w..iy * w + w],
                        w0,
                        w1,
                        w2,
                    );
                }
            }
        }
    }
}

/// General conv plane: any kernel size, stride, padding.
#[inline(never)]
fn conv_plane_general<T: Element>(
    acc: &mut [T],
    xp: &[T],
    wp: &[T], // cin*k*k weights for this output channel
    g: &ConvGeom,
) {
    let (h, w, k, s, pad) = (g.h, g.w, g.k, g.stride, g.pad);
    for ci in 0..g.cin {
        let xc = &xp[ci * h * w..(ci + 1) * h * w];
        let wc = &wp[ci * k * k..(ci + 1) * k * k];
        for ky in 0..k {
            for kx in 0..k {
                let wv = wc[ky * k + kx];
                for oy in 0..g.oh {
                    let iy = (oy * s + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &xc[iy as usize * w..iy as usize * w + w];
                    let arow = &mut acc[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, a) in arow.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        *a = row[ix as usize].mul_add(wv, *a);
                    }
                }
            }
        }
    }
}

fn use_k3_path(g: &ConvGeom) -> bool {
    g.k == 3 && g.stride == 1 && g.pad <= 1 && g.ow >= 2
}

// ---------------------------------------------------------------------------
// conv2d forward / backward
// ---------------------------------------------------------------------------

fn conv2d_fwd_impl<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, bias, stride, pad)?;
    let mut out = Tensor::zeros(&[g.b, g.cout, g.oh, g.ow]);
    let plane = g.oh * g.ow;
    let xd = x.data();
    let wd = w.data();
    let bd = bias.data();
    run_planes(out.data_mut(), plane, parallel, |p, acc| {
        let (bi, co) = (p / g.cout, p % g.cout);
        let xp = &xd[bi * g.cin * g.h * g.w..(bi + 1) * g.cin * g.h * g.w];
        if use_k3_path(&g) {
            let wp = &wd[co * g.cin * 9..(co + 1) * g.cin * 9];
            conv_plane_k3(acc, xp, g.cin, g.h, g.w, g.pad, g.oh, g.ow, |ci, ky| {
                let t = &wp[ci * 9 + ky * 3..ci * 9 + ky * 3 + 3];
                (t[0], t[1], t[2])
            });
        } else {
            let wp = &wd[co * g.cin * g.k * g.k..(co + 1) * g.cin * g.k * g.k];
            conv_plane_general(acc, xp, wp, &g);
        }
        let bv = bd[co];
        for v in acc.iter_mut() {
            *v += bv;
        }
    });
    Ok(out)
}

/// Gradient w.r.t. the conv input. `dy` is [B,Cout,OH,OW]; returns [B,Cin,H,W].
fn conv2d_bwd_x_impl<T: Element>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_dims: &[usize],
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(x_dims);
    let bias0 = Tensor::<T>::zeros(&[w.dims()[0]]);
    let g = conv_geom(&probe, w, &bias0, stride, pad)?;
    let (db, dcout, doh, dow) = dy.dims4()?;
    if (db, dcout, doh, dow) != (g.b, g.cout, g.oh, g.ow) {
        return Err(Error::Shape(format!(
            "conv2d backward: dy dims {:?} but forward output was [{}, {}, {}, {}]",
            dy.dims(),
            g.b,
            g.cout,
            g.oh,
            g.ow
        )));
    }
    let mut dx = Tensor::zeros(x_dims);
    let plane = g.h * g.w;
    let dyd = dy.data();
    let wd = w.data();
    run_planes(dx.data_mut(), plane, parallel, |p, acc| {
        let (bi, ci) = (p / g.cin, p % g.cin);
        let dyp = &dyd[bi * g.cout * g.oh * g.ow..(bi + 1) * g.cout * g.oh * g.ow];
        if use_k3_path(&g) && g.pad == 1 {
            // Full correlation with flipped taps is itself a 3x3 pad-1 pass
            // over dy (stride 1 keeps input and output planes the same size).
            conv_plane_k3(acc, dyp, g.cout, g.oh, g.ow, 1, g.h, g.w, |co, ky| {
                let base = (co * g.cin + ci) * 9 + (2 - ky) * 3;
                (wd[base + 2], wd[base + 1], wd[base])
            });
        } else {
            // Scatter within this (batch, in-channel) plane; iteration order
            // is fixed, so each element's accumulation order is fixed.
            for co in 0..g.cout {
                let dyc = &dyp[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
                let wc = &wd[(co * g.cin + ci) * g.k * g.k..(co * g.cin + ci + 1) * g.k * g.k];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wc[ky * g.k + kx];
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let dyrow = &dyc[oy * g.ow..(oy + 1) * g.ow];
                            let arow = &mut acc[iy as usize * g.w..(iy as usize + 1) * g.w];
                            for (ox, &d) in dyrow.iter().enumerate() {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                arow[ix as usize] = d.mul_add(wv, arow[ix as usize]);
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(dx)
}

/// Gradient w.r.t. the conv weight. Returns [Cout,Cin,K,K].
fn conv2d_bwd_w_impl<T: Element>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let (b, cin, h, w) = x.dims4()?;
    let (db, cout, oh, ow) = dy.dims4()?;
    if db != b {
        return Err(Error::Shape(format!(
            "conv2d backward: batch {b} vs dy batch {db}"
        )));
    }
    let mut dw = Tensor::zeros(&[cout, cin, k, k]);
    let xd = x.data();
    let dyd = dy.data();
    // One task per (co, ci) weight cell.
    run_planes(dw.data_mut(), k * k, parallel, |p, cell| {
        let (co, ci) = (p / cin, p % cin);
        if k == 3 && stride == 1 && pad == 1 && ow >= 2 {
            // Vector accumulators per tap, reduced sequentially at the end.
            let mut acc = vec![T::zero(); 9 * ow];
            for bi in 0..b {
                let dyc = &dyd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                let xc = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                for oy in 0..oh {
                    let dyrow = &dyc[oy * ow..(oy + 1) * ow];
                    for ky in 0..3 {
                        let iy = (oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                        // kx = 0 : x shifted left  (ox in 1..ow)
                        let a0 = &mut acc[ky * 3 * ow..ky * 3 * ow + ow];
                        for (a, (&d, &xv)) in
                            a0[1..].iter_mut().zip(dyrow[1..].iter().zip(&xrow[..ow - 1]))
                        {
                            *a = d.mul_add(xv, *a);
                        }
                        // kx = 1 : aligned
                        let a1 = &mut acc[(ky * 3 + 1) * ow..(ky * 3 + 1) * ow + ow];
                        for (a, (&d, &xv)) in a1.iter_mut().zip(dyrow.iter().zip(xrow)) {
                            *a = d.mul_add(xv, *a);
                        }
                        // kx = 2 : x shifted right (ox in 0..ow-1)
                        let a2 = &mut acc[(ky * 3 + 2) * ow..(ky * 3 + 2) * ow + ow];
                        for (a, (&d, &xv)) in
                            a2[..ow - 1].iter_mut().zip(dyrow[..ow - 1].iter().zip(&xrow[1..]))
                        {
                            *a = d.mul_add(xv, *a);
                        }
                    }
                }
            }
            for t in 0..9 {
                let mut s = T::zero();
                for &v in &acc[t * ow..(t + 1) * ow] {
                    s += v;
                }
                cell[t] = s;
            }
        } else {
            for ky in 0..k {
                for kx in 0..k {
                    let mut s = T::zero();
                    for bi in 0..b {
                        let dyc = &dyd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                        let xc = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                            let dyrow = &dyc[oy * ow..(oy + 1) * ow];
                            for (ox, &d) in dyrow.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                s = d.mul_add(xrow[ix as usize], s);
                            }
                        }
                    }
                    cell[ky * k + kx] = s;
                }
            }
        }
    });
    Ok(dw)
}

/// Per-channel sum of `dy` over batch and spatial dims: the bias gradient
/// shared by conv2d, conv_transpose2d and plain bias addition.
pub fn bias_grad<T: Element>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dy.dims4()?;
    let mut db = Tensor::zeros(&[c]);
    let dyd = dy.data();
    let out = db.data_mut();
    for co in 0..c {
        let mut s = T::zero();
        for bi in 0..b {
            for &v in &dyd[(bi * c + co) * h * w..(bi * c + co + 1) * h * w] {
                s += v;
            }
        }
        out[co] = s;
    }
    Ok(db)
}

// ---------------------------------------------------------------------------
// conv_transpose2d forward / backward
// ---------------------------------------------------------------------------

fn convt2d_fwd_impl<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let g = convt_geom(x, w, bias, stride, pad)?;
    let mut out = Tensor::zeros(&[g.b, g.cout, g.oh, g.ow]);
    let plane = g.oh * g.ow;
    let xd = x.data();
    let wd = w.data();
    let bd = bias.data();
    run_planes(out.data_mut(), plane, parallel, |p, acc| {
        let (bi, co) = (p / g.cout, p % g.cout);
        let xp = &xd[bi * g.cin * g.h * g.w..(bi + 1) * g.cin * g.h * g.w];
        if g.k == 2 && g.stride == 2 && g.pad == 0 {
            // Non-overlapping 2x2 output blocks: each input pixel owns one
            // block, so the scatter becomes two interleaved streaming rows.
            for ci in 0..g.cin {
                let xc = &xp[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                let wc = &wd[(ci * g.cout + co) * 4..(ci * g.cout + co + 1) * 4];
                let (w00, w01, w10, w11) = (wc[0], wc[1], wc[2], wc[3]);
                for iy in 0..g.h {
                    let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                    let r0 = &mut acc[2 * iy * g.ow..(2 * iy + 1) * g.ow];
                    for (o2, &xv) in r0.chunks_exact_mut(2).zip(xrow) {
                        o2[0] = xv.mul_add(w00, o2[0]);
                        o2[1] = xv.mul_add(w01, o2[1]);
                    }
                    let r1 = &mut acc[(2 * iy + 1) * g.ow..(2 * iy + 2) * g.ow];
                    for (o2, &xv) in r1.chunks_exact_mut(2).zip(xrow) {
                        o2[0] = xv.mul_add(w10, o2[0]);
                        o2[1] = xv.mul_add(w11, o2[1]);
                    }
                }
            }
        } else {
            for ci in 0..g.cin {
                let xc = &xp[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                let wc = &wd[(ci * g.cout + co) * g.k * g.k..(ci * g.cout + co + 1) * g.k * g.k];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wc[ky * g.k + kx];
                        for iy in 0..g.h {
                            let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                            let arow = &mut acc[oy as usize * g.ow..(oy as usize + 1) * g.ow];
                            for (ix, &xv) in xrow.iter().enumerate() {
                                let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                arow[ox as usize] = xv.mul_add(wv, arow[ox as usize]);
                            }
                        }
                    }
                }
            }
        }
        let bv = bd[co];
        for v in acc.iter_mut() {
            *v += bv;
        }
    });
    Ok(out)
}

fn convt2d_bwd_x_impl<T: Element>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_dims: &[usize],
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(x_dims);
    let bias0 = Tensor::<T>::zeros(&[w.dims()[1]]);
    let g = convt_geom(&probe, w, &bias0, stride, pad)?;
    let (db, dcout, doh, dow) = dy.dims4()?;
    if (db, dcout, doh, dow) != (g.b, g.cout, g.oh, g.ow) {
        return Err(Error::Shape(format!(
            "conv_transpose2d backward: dy dims {:?} but forward output was [{}, {}, {}, {}]",
            dy.dims(),
            g.b,
            g.cout,
            g.oh,
            g.ow
        )));
    }
    let mut dx = Tensor::zeros(x_dims);
    let plane = g.h * g.w;
    let dyd = dy.data();
    let wd = w.data();
    run_planes(dx.data_mut(), plane, parallel, |p, acc| {
        let (bi, ci) = (p / g.cin, p % g.cin);
        let dyp = &dyd[bi * g.cout * g.oh * g.ow..(bi + 1) * g.cout * g.oh * g.ow];
        if g.k == 2 && g.stride == 2 && g.pad == 0 {
            // Each dx pixel gathers its private 2x2 dy block.
            for co in 0..g.cout {
                let dyc = &dyp[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
                let wc = &wd[(ci * g.cout + co) * 4..(ci * g.cout + co + 1) * 4];
                for iy in 0..g.h {
                    let arow = &mut acc[iy * g.w..(iy + 1) * g.w];
                    for ky in 0..2 {
                        let dyrow = &dyc[(2 * iy + ky) * g.ow..(2 * iy + ky + 1) * g.ow];
                        let (wa, wb) = (wc[ky * 2], wc[ky * 2 + 1]);
                        for (a, d2) in arow.iter_mut().zip(dyrow.chunks_exact(2)) {
                            *a = d2[1].mul_add(wb, d2[0].mul_add(wa, *a));
                        }
                    }
                }
            }
        } else {
            for co in 0..g.cout {
                let dyc = &dyp[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
                let wc = &wd[(ci * g.cout + co) * g.k * g.k..(ci * g.cout + co + 1) * g.k * g.k];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = wc[ky * g.k + kx];
                        for iy in 0..g.h {
                            let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            let dyrow = &dyc[oy as usize * g.ow..(oy as usize + 1) * g.ow];
                            let arow = &mut acc[iy * g.w..(iy + 1) * g.w];
                            for (ix, a) in arow.iter_mut().enumerate() {
                                let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                *a = dyrow[ox as usize].mul_add(wv, *a);
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(dx)
}

fn convt2d_bwd_w_impl<T: Element>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
    parallel: bool,
) -> Result<Tensor<T>> {
    let (b, cin, h, w) = x.dims4()?;
    let (db, cout, oh, ow) = dy.dims4()?;
    if db != b {
        return Err(Error::Shape(format!(
            "conv_transpose2d backward: batch {b} vs dy batch {db}"
        )));
    }
    let mut dw = Tensor::zeros(&[cin, cout, k, k]);
    let xd = x.data();
    let dyd = dy.data();
    run_planes(dw.data_mut(), k * k, parallel, |p, cell| {
        let (ci, co) = (p / cout, p % cout);
        if k == 2 && stride == 2 && pad == 0 && oh == 2 * h && ow == 2 * w {
            // Vector accumulators per tap, reduced sequentially at the end.
            let mut acc = vec![T::zero(); 4 * w];
            for bi in 0..b {
                let xc = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                let dyc = &dyd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                for iy in 0..h {
                    let xrow = &xc[iy * w..(iy + 1) * w];
                    for ky in 0..2 {
                        let dyrow = &dyc[(2 * iy + ky) * ow..(2 * iy + ky + 1) * ow];
                        let block = &mut acc[ky * 2 * w..(ky * 2 + 2) * w];
                        let (a0, a1) = block.split_at_mut(w);
                        for ((e0, e1), (&xv, d2)) in a0
                            .iter_mut()
                            .zip(a1.iter_mut())
                            .zip(xrow.iter().zip(dyrow.chunks_exact(2)))
                        {
                            *e0 = xv.mul_add(d2[0], *e0);
                            *e1 = xv.mul_add(d2[1], *e1);
                        }
                    }
                }
            }
            for t in 0..4 {
                let mut s = T::zero();
                for &v in &acc[t * w..(t + 1) * w] {
                    s += v;
                }
                cell[t] = s;
            }
        } else {
            for ky in 0..k {
                for kx in 0..k {
                    let mut s = T::zero();
                    for bi in 0..b {
                        let xc = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        let dyc = &dyd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                        for iy in 0..h {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let xrow = &xc[iy * w..(iy + 1) * w];
                            let dyrow = &dyc[oy as usize * ow..(oy as usize + 1) * ow];
                            for (ix, &xv) in xrow.iter().enumerate() {
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                s = xv.mul_add(dyrow[ox as usize], s);
                            }
                        }
                    }
                    cell[ky * k + kx] = s;
                }
            }
        }
    });
    Ok(dw)
}

// ---------------------------------------------------------------------------
// maxpool 2x2 stride 2
// ---------------------------------------------------------------------------

fn maxpool2_fwd_impl<T: Element>(
    x: &Tensor<T>,
    parallel: bool,
) -> Result<(Tensor<T>, Vec<u8>)> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2d requires even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut arg = vec![0u8; b * c * oh * ow];
    let xd = x.data();
    // Planes of (value, argmax) pairs would need two buffers; simplest is to
    // compute argmax in the same pass over an interleaved mutable pair.
    {
        let od = out.data_mut();
        let plane = oh * ow;
        let pair: Vec<(usize, &mut [T], &mut [u8])> = od
            .chunks_mut(plane)
            .zip(arg.chunks_mut(plane))
            .enumerate()
            .map(|(p, (o, a))| (p, o, a))
            .collect();
        let work = |(p, o, a): (usize, &mut [T], &mut [u8])| {
            let xc = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = xc[(2 * oy) * w + 2 * ox];
                    let mut bi = 0u8;
                    for (idx, (dy, dx)) in
                        [(0usize, 1usize), (1, 0), (1, 1)].iter().enumerate()
                    {
                        let v = xc[(2 * oy + dy) * w + 2 * ox + dx];
                        if v > best {
                            best = v;
                            bi = idx as u8 + 1;
                        }
                    }
                    o[oy * ow + ox] = best;
                    a[oy * ow + ox] = bi;
                }
            }
        };
        #[cfg(feature = "parallel")]
        if parallel {
            use rayon::prelude::*;
            pair.into_par_iter().for_each(work);
            return Ok((out, arg));
        }
        let _ = parallel;
        pair.into_iter().for_each(work);
    }
    Ok((out, arg))
}

fn maxpool2_bwd_impl<T: Element>(
    dy: &Tensor<T>,
    argmax: &[u8],
    x_dims: &[usize],
    parallel: bool,
) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = dy.dims4()?;
    let (xb, xc, h, w) = match x_dims[..] {
        [a, bb, cc, d] => (a, bb, cc, d),
        _ => return Err(Error::Shape(format!("expected 4-d input dims, got {x_dims:?}"))),
    };
    if (xb, xc, h / 2, w / 2) != (b, c, oh, ow) || argmax.len() != dy.numel() {
        return Err(Error::Shape(format!(
            "maxpool2d backward: dy {:?} does not match input {:?}",
            dy.dims(),
            x_dims
        )));
    }
    let mut dx = Tensor::zeros(x_dims);
    let dyd = dy.data();
    run_planes(dx.data_mut(), h * w, parallel, |p, acc| {
        let dyc = &dyd[p * oh * ow..(p + 1) * oh * ow];
        let ac = &argmax[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let a = ac[oy * ow + ox] as usize;
                let (ady, adx) = (a / 2, a % 2);
                acc[(2 * oy + ady) * w + 2 * ox + adx] = dyc[oy * ow + ox];
            }
        }
    });
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Public drivers: `seq` always runs serially, `par` distributes over the
// rayon pool, and the bare functions dispatch on the `parallel` feature.
// ---------------------------------------------------------------------------

macro_rules! drivers {
    ($( $name:ident ( $( $arg:ident : $ty:ty ),* ) -> $ret:ty = $impl:ident ; )*) => {
        pub mod seq {
            use super::*;
            $( pub fn $name<T: Element>( $( $arg : $ty ),* ) -> $ret { $impl( $( $arg ),* , false) } )*
        }
        #[cfg(feature = "parallel")]
        pub mod par {
            use super::*;
            $( pub fn $name<T: Element>( $( $arg : $ty ),* ) -> $ret { $impl( $( $arg ),* , true) } )*
        }
        $(
            pub fn $name<T: Element>( $( $arg : $ty ),* ) -> $ret {
                #[cfg(feature = "parallel")]
                return $impl( $( $arg ),* , true);
                #[cfg(not(feature = "parallel"))]
                $impl( $( $arg ),* , false)
            }
        )*
    };
}

drivers! {
    conv2d_fwd(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> = conv2d_fwd_impl;
    conv2d_bwd_x(dy: &Tensor<T>, w: &Tensor<T>, x_dims: &[usize], stride: usize, pad: usize) -> Result<Tensor<T>> = conv2d_bwd_x_impl;
    conv2d_bwd_w(dy: &Tensor<T>, x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> = conv2d_bwd_w_impl;
    convt2d_fwd(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> = convt2d_fwd_impl;
    convt2d_bwd_x(dy: &Tensor<T>, w: &Tensor<T>, x_dims: &[usize], stride: usize, pad: usize) -> Result<Tensor<T>> = convt2d_bwd_x_impl;
    convt2d_bwd_w(dy: &Tensor<T>, x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Result<Tensor<T>> = convt2d_bwd_w_impl;
    maxpool2_fwd(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u8>)> = maxpool2_fwd_impl;
    maxpool2_bwd(dy: &Tensor<T>, argmax: &[u8], x_dims: &[usize]) -> Result<Tensor<T>> = maxpool2_bwd_impl;
}
