//! Forward and backward kernels on plain tensors.
//!
//! The graph in [`crate::graph`] records which kernel produced each node and
//! calls the matching `*_backward` routine during reverse accumulation. All
//! spatial kernels take NCHW tensors.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// broadcasting

/// Output shape of an elementwise op between equal-rank shapes whose dims are
/// either equal or 1 on one side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside `out`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = contiguous_strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == 1 && o != 1 { 0 } else { st })
        .collect()
}

fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        // increment the multi-index, maintaining operand offsets
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
    Tensor::new(out, data).expect("broadcast shape")
}

/// Gradients of an elementwise binary op: `ga = g * da(a,b)`, `gb = g * db(a,b)`,
/// each summed back to its operand's shape.
pub fn broadcast_binary_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    da: impl Fn(T, T) -> T,
    db: impl Fn(T, T) -> T,
) -> (Tensor<T>, Tensor<T>) {
    let mut ga = Tensor::zeros(a.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    let out = g.shape().to_vec();
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    {
        let gam = ga.data_mut();
        let gbm = gb.data_mut();
        for_each_broadcast(&out, &sa, &sb, |o, ia, ib| {
            gam[ia] = gam[ia] + gd[o] * da(ad[ia], bd[ib]);
            gbm[ib] = gbm[ib] + gd[o] * db(ad[ia], bd[ib]);
        });
    }
    (ga, gb)
}

/// Sum over the given axes, keeping them as size-1 dims.
pub fn sum_axes<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let mut out_shape = x.shape().to_vec();
    for &a in axes {
        out_shape[a] = 1;
    }
    let mut acc = vec![0f64; out_shape.iter().product()];
    let so = broadcast_strides(&out_shape, x.shape());
    let zero = vec![0; x.rank()];
    let xd = x.data();
    for_each_broadcast(x.shape(), &so, &zero, |i, o, _| acc[o] += xd[i].as_f64());
    Tensor::new(out_shape, acc.into_iter().map(T::from_f64_lossy).collect()).expect("sum shape")
}

/// Expand `g` (shape with size-1 axes) back to `shape`.
pub fn expand_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let sg = broadcast_strides(g.shape(), shape);
    let zero = vec![0; shape.len()];
    let mut data = vec![T::zero(); shape.iter().product()];
    let gd = g.data();
    for_each_broadcast(shape, &sg, &zero, |o, i, _| data[o] = gd[i]);
    Tensor::new(shape.to_vec(), data).expect("expand shape")
}

// ---------------------------------------------------------------------------
// dense layers

/// `y = x w^T + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, fin) = (x.dim(0), x.dim(1));
    let fout = w.dim(0);
    assert_eq!(w.dim(1), fin, "linear: weight expects {} inputs, got {}", w.dim(1), fin);
    let mut y = vec![T::zero(); n * fout];
    if let Some(b) = b {
        for row in y.chunks_mut(fout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(n, fin, fout, T::one(), x.data(), false, w.data(), true, beta, &mut y);
    Tensor::new(vec![n, fout], y).expect("linear shape")
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = (x.dim(0), x.dim(1));
    let fout = w.dim(0);
    let mut gx = vec![T::zero(); n * fin];
    T::gemm(n, fout, fin, T::one(), gy.data(), false, w.data(), false, T::zero(), &mut gx);
    let mut gw = vec![T::zero(); fout * fin];
    T::gemm(fout, n, fin, T::one(), gy.data(), true, x.data(), false, T::zero(), &mut gw);
    let gb = sum_axes(gy, &[0]).reshape(vec![fout]).expect("bias grad");
    (
        Tensor::new(vec![n, fin], gx).expect("gx"),
        Tensor::new(vec![fout, fin], gw).expect("gw"),
        gb,
    )
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // contiguous run with zero borders
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_geom<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> ConvGeom {
    let (_, c, h, wd) = x.dims4();
    let (_, wc, kh, kw) = w.dims4();
    assert_eq!(c, wc, "conv2d: input has {} channels, kernel expects {}", c, wc);
    assert!(
        h + 2 * pad >= kh && wd + 2 * pad >= kw,
        "conv2d: kernel larger than padded input"
    );
    ConvGeom { c, h, w: wd, kh, kw, stride, pad }
}

/// Cross-correlation with zero padding: `x: [n,c,h,w]`, `w: [o,c,kh,kw]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, stride: usize, pad: usize) -> Tensor<T> {
    let g = conv_geom(x, w, stride, pad);
    let n = x.dim(0);
    let cout = w.dim(0);
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let k = g.k();
    let mut y = vec![T::zero(); n * cout * ohw];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
    let in_per = g.c * g.h * g.w;
    for s in 0..n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let ys = &mut y[s * cout * ohw..(s + 1) * cout * ohw];
        if let Some(b) = b {
            for (o, row) in ys.chunks_mut(ohw).enumerate() {
                row.fill(b.data()[o]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        T::gemm(cout, k, ohw, T::one(), w.data(), false, rhs, false, beta, ys);
    }
    Tensor::new(vec![n, cout, oh, ow], y).expect("conv shape")
}

/// Returns `(gx, gw, gb)`; gx is skipped when `need_x` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let g = conv_geom(x, w, stride, pad);
    let n = x.dim(0);
    let cout = w.dim(0);
    let ohw = g.out_h() * g.out_w();
    let k = g.k();
    let in_per = g.c * g.h * g.w;
    let mut gw = vec![T::zero(); cout * k];
    let mut gx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
    let mut gcols = vec![T::zero(); k * ohw];
    for s in 0..n {
        let xs = &x.data()[s * in_per..(s + 1) * in_per];
        let gys = &gy.data()[s * cout * ohw..(s + 1) * cout * ohw];
        let rhs: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        T::gemm(cout, ohw, k, T::one(), gys, false, rhs, true, T::one(), &mut gw);
        if need_x {
            T::gemm(k, cout, ohw, T::one(), w.data(), true, gys, false, T::zero(), &mut gcols);
            let gxs = &mut gx[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                gxs.copy_from_slice(&gcols);
            } else {
                col2im(&gcols, &g, gxs);
            }
        }
    }
    let gb = sum_axes(gy, &[0, 2, 3]).reshape(vec![cout]).expect("bias grad");
    (
        need_x.then(|| Tensor::new(x.shape().to_vec(), gx).expect("gx")),
        Tensor::new(w.shape().to_vec(), gw).expect("gw"),
        gb,
    )
}

// ---------------------------------------------------------------------------
// resampling

pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * f, w * f);
    let mut y = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / f) * w + ox / f];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], y).expect("upsample shape")
}

pub fn upsample_nearest_backward<T: Scalar>(gy: &Tensor<T>, f: usize) -> Tensor<T> {
    avg_pool(gy, f).scale(T::from_f64_lossy((f * f) as f64))
}

/// 2x bilinear taps with half-pixel centres (`align_corners = false`).
fn bilinear2x_taps(len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let l = src - i0 as f64;
            (i0, i1, 1.0 - l, l)
        })
        .collect()
}

pub fn upsample_bilinear2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let ty = bilinear2x_taps(h);
    let tx = bilinear2x_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = wy0 * (wx0 * src[y0 * w + x0].as_f64() + wx1 * src[y0 * w + x1].as_f64())
                    + wy1 * (wx0 * src[y1 * w + x0].as_f64() + wx1 * src[y1 * w + x1].as_f64());
                dst[oy * ow + ox] = T::from_f64_lossy(v);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], y).expect("bilinear shape")
}

pub fn upsample_bilinear2x_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, c, oh, ow) = gy.dims4();
    let (h, w) = (oh / 2, ow / 2);
    let ty = bilinear2x_taps(h);
    let tx = bilinear2x_taps(w);
    let mut gx = vec![0f64; n * c * h * w];
    for p in 0..n * c {
        let src = &gy.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let g = src[oy * ow + ox].as_f64();
                dst[y0 * w + x0] += g * wy0 * wx0;
                dst[y0 * w + x1] += g * wy0 * wx1;
                dst[y1 * w + x0] += g * wy1 * wx0;
                dst[y1 * w + x1] += g * wy1 * wx1;
            }
        }
    }
    Tensor::new(vec![n, c, h, w], gx.into_iter().map(T::from_f64_lossy).collect()).expect("bilinear grad")
}

/// Non-overlapping `k x k` average pooling; spatial dims must divide by `k`.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(h % k == 0 && w % k == 0, "avg_pool: {}x{} not divisible by {}", h, w, k);
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut y = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0f64;
                for dy in 0..k {
                    for dx in 0..k {
                        s += src[(oy * k + dy) * w + ox * k + dx].as_f64();
                    }
                }
                y[p * oh * ow + oy * ow + ox] = T::from_f64_lossy(s * inv);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], y).expect("pool shape")
}

pub fn avg_pool_backward<T: Scalar>(gy: &Tensor<T>, k: usize) -> Tensor<T> {
    upsample_nearest(gy, k).scale(T::from_f64_lossy(1.0 / (k * k) as f64))
}

/// `[n, c*r*r, h, w] -> [n, c, h*r, w*r]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, cr, h, w) = x.dims4();
    assert_eq!(cr % (r * r), 0, "pixel_shuffle: {} channels not divisible by {}", cr, r * r);
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut y = vec![T::zero(); x.len()];
    let xd = x.data();
    for s in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src_c = ch * r * r + (oy % r) * r + ox % r;
                    y[((s * c + ch) * oh + oy) * ow + ox] = xd[((s * cr + src_c) * h + oy / r) * w + ox / r];
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], y).expect("shuffle shape")
}

pub fn pixel_shuffle_backward<T: Scalar>(gy: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, c, oh, ow) = gy.dims4();
    let (h, w, cr) = (oh / r, ow / r, c * r * r);
    let mut gx = vec![T::zero(); gy.len()];
    let gd = gy.data();
    for s in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src_c = ch * r * r + (oy % r) * r + ox % r;
                    gx[((s * cr + src_c) * h + oy / r) * w + ox / r] = gd[((s * c + ch) * oh + oy) * ow + ox];
                }
            }
        }
    }
    Tensor::new(vec![n, cr, h, w], gx).expect("shuffle grad")
}

// ---------------------------------------------------------------------------
// channel concatenation

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (n, _, h, w) = parts[0].dims4();
    let mut ctot = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4();
        assert!(pn == n && ph == h && pw == w, "concat: mismatched shapes");
        ctot += pc;
    }
    let hw = h * w;
    let mut y = Vec::with_capacity(n * ctot * hw);
    for s in 0..n {
        for p in parts {
            let pc = p.dim(1);
            y.extend_from_slice(&p.data()[s * pc * hw..(s + 1) * pc * hw]);
        }
    }
    Tensor::new(vec![n, ctot, h, w], y).expect("concat shape")
}

pub fn split_channels<T: Scalar>(g: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (n, ctot, h, w) = g.dims4();
    let hw = h * w;
    let mut outs: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
    for s in 0..n {
        let mut off = s * ctot * hw;
        for (i, &c) in sizes.iter().enumerate() {
            outs[i].extend_from_slice(&g.data()[off..off + c * hw]);
            off += c * hw;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::new(vec![n, c, h, w], d).expect("split shape"))
        .collect()
}

// ---------------------------------------------------------------------------
// adaptive instance normalization

/// Per-(sample, channel) mean and population standard deviation.
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> Vec<(f64, f64)> {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    (0..n * c)
        .map(|p| {
            let plane = &x.data()[p * hw..(p + 1) * hw];
            let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / hw as f64;
            (mean, var.sqrt())
        })
        .collect()
}

/// `alpha * (x - mean) / (std + eps) + beta` per sample and channel;
/// `alpha`, `beta` are `[n, c]`.
pub fn adain<T: Scalar>(x: &Tensor<T>, alpha: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(alpha.shape(), &[n, c], "adain: alpha must be [{}, {}]", n, c);
    assert_eq!(beta.shape(), &[n, c], "adain: beta must be [{}, {}]", n, c);
    let hw = h * w;
    let moments = channel_moments(x);
    let mut y = vec![T::zero(); x.len()];
    for (p, &(mean, std)) in moments.iter().enumerate() {
        let a = alpha.data()[p].as_f64() / (std + eps);
        let b = beta.data()[p].as_f64();
        for (o, v) in y[p * hw..(p + 1) * hw].iter_mut().zip(&x.data()[p * hw..(p + 1) * hw]) {
            *o = T::from_f64_lossy(a * (v.as_f64() - mean) + b);
        }
    }
    Tensor::new(x.shape().to_vec(), y).expect("adain shape")
}

/// Returns `(gx, galpha, gbeta)`.
pub fn adain_backward<T: Scalar>(
    x: &Tensor<T>,
    alpha: &Tensor<T>,
    gy: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let nf = hw as f64;
    let moments = channel_moments(x);
    let mut gx = vec![T::zero(); x.len()];
    let mut ga = vec![T::zero(); n * c];
    let mut gb = vec![T::zero(); n * c];
    for (p, &(mean, std)) in moments.iter().enumerate() {
        let d = std + eps;
        let xs = &x.data()[p * hw..(p + 1) * hw];
        let gs = &gy.data()[p * hw..(p + 1) * hw];
        let a = alpha.data()[p].as_f64();
        let (mut sum_g, mut sum_gxh, mut sum_gc) = (0f64, 0f64, 0f64);
        for (&xv, &gv) in xs.iter().zip(gs) {
            let centered = xv.as_f64() - mean;
            let g = gv.as_f64();
            sum_g += g;
            sum_gxh += g * centered / d;
            sum_gc += g * centered;
        }
        gb[p] = T::from_f64_lossy(sum_g);
        ga[p] = T::from_f64_lossy(sum_gxh);
        // d xhat_i / d x_j = (delta_ij - 1/n)/d - (x_i - mean)(x_j - mean)/(n std d^2)
        let mean_g = sum_g / nf;
        let cov_term = if std > 0.0 { sum_gc / (nf * std * d * d) } else { 0.0 };
        for (i, &xv) in xs.iter().enumerate() {
            let centered = xv.as_f64() - mean;
            let g = gs[i].as_f64();
            gx[p * hw + i] = T::from_f64_lossy(a * ((g - mean_g) / d - centered * cov_term));
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("gx"),
        Tensor::new(vec![n, c], ga).expect("ga"),
        Tensor::new(vec![n, c], gb).expect("gb"),
    )
}

// ---------------------------------------------------------------------------
// separable 'valid' filtering (used by SSIM)

/// Applies the 1-D kernel along rows and columns without padding:
/// output spatial size is `(h - k + 1) x (w - k + 1)`.
pub fn sep_filter_valid<T: Scalar>(x: &Tensor<T>, kernel: &[f64]) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let k = kernel.len();
    assert!(h >= k && w >= k, "sep_filter_valid: {}x{} smaller than kernel {}", h, w, k);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut y = vec![T::zero(); n * c * oh * ow];
    let mut tmp = vec![0f64; h * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for ox in 0..ow {
                let mut s = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    s += kv * src[r * w + ox + t].as_f64();
                }
                tmp[r * ow + ox] = s;
            }
        }
        let dst = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    s += kv * tmp[(oy + t) * ow + ox];
                }
                dst[oy * ow + ox] = T::from_f64_lossy(s);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], y).expect("filter shape")
}

pub fn sep_filter_valid_backward<T: Scalar>(gy: &Tensor<T>, kernel: &[f64], h: usize, w: usize) -> Tensor<T> {
    let (n, c, oh, ow) = gy.dims4();
    let k = kernel.len();
    let mut gx = vec![T::zero(); n * c * h * w];
    let mut tmp = vec![0f64; h * ow];
    let mut acc = vec![0f64; h * w];
    for p in 0..n * c {
        let g = &gy.data()[p * oh * ow..(p + 1) * oh * ow];
        tmp.fill(0.0);
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox].as_f64();
                for (t, kv) in kernel.iter().enumerate() {
                    tmp[(oy + t) * ow + ox] += kv * gv;
                }
            }
        }
        acc.fill(0.0);
        for r in 0..h {
            for ox in 0..ow {
                let tv = tmp[r * ow + ox];
                for (t, kv) in kernel.iter().enumerate() {
                    acc[r * w + ox + t] += kv * tv;
                }
            }
        }
        for (d, a) in gx[p * h * w..(p + 1) * h * w].iter_mut().zip(&acc) {
            *d = T::from_f64_lossy(*a);
        }
    }
    debug_assert!(k <= h && k <= w);
    Tensor::new(vec![n, c, h, w], gx).expect("filter grad")
}
