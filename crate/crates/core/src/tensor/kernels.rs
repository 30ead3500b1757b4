//! Forward and backward kernels on plain tensors.
//!
//! Nothing here knows about the tape; [`super::Tape`] records these calls and
//! routes gradients between them.

use super::{shape_err, Real, Result, Tensor};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ind: [usize; 3],
    outd: [usize; 3],
}

impl ConvGeom {
    fn in_vox(&self) -> usize {
        self.ind.iter().product()
    }

    fn out_vox(&self) -> usize {
        self.outd.iter().product()
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    const OP: &str = "conv3d";
    let is = input.shape();
    let ks = kernel.shape();
    if is.len() != 5 {
        return Err(shape_err(OP, format!("input must be [N,C,D,H,W], got {is:?}")));
    }
    if ks.len() != 5 || ks[2] != ks[3] || ks[3] != ks[4] {
        return Err(shape_err(OP, format!("kernel must be [O,C,k,k,k], got {ks:?}")));
    }
    if is[1] != ks[1] {
        return Err(shape_err(
            OP,
            format!("input channels {} (input shape {is:?}) do not match kernel channels {} (kernel shape {ks:?})", is[1], ks[1]),
        ));
    }
    if bias.shape() != [ks[0]] {
        return Err(shape_err(
            OP,
            format!("bias shape {:?} does not match {} output channels", bias.shape(), ks[0]),
        ));
    }
    if stride == 0 {
        return Err(shape_err(OP, "stride must be positive"));
    }
    let k = ks[2];
    let mut outd = [0; 3];
    for axis in 0..3 {
        let extent = is[2 + axis] + 2 * pad;
        if k > extent {
            return Err(shape_err(
                OP,
                format!("kernel size {k} exceeds padded input extent {extent} (input shape {is:?}, padding {pad})"),
            ));
        }
        outd[axis] = (extent - k) / stride + 1;
    }
    Ok(ConvGeom {
        n: is[0],
        c: is[1],
        o: ks[0],
        k,
        stride,
        pad,
        ind: [is[2], is[3], is[4]],
        outd,
    })
}

/// Output spatial extent of a convolution or pooling window along one axis.
pub(crate) fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    (k <= padded && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Unfolds one sample `[C, D, H, W]` into `cols` of shape `[C·k³, D'·H'·W']`.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let [d, h, w] = g.ind;
    let [od, oh, ow] = g.outd;
    let p = g.out_vox();
    let (k, s) = (g.k, g.stride);
    let pad = g.pad as isize;
    let mut row = 0;
    for c in 0..g.c {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let iz = (z * s + kd) as isize - pad;
                        for y in 0..oh {
                            let iy = (y * s + kh) as isize - pad;
                            let inside_zy =
                                iz >= 0 && (iz as usize) < d && iy >= 0 && (iy as usize) < h;
                            let base = if inside_zy {
                                (iz as usize * h + iy as usize) * w
                            } else {
                                0
                            };
                            for xo in 0..ow {
                                let ix = (xo * s + kw) as isize - pad;
                                dst[idx] = if inside_zy && ix >= 0 && (ix as usize) < w {
                                    xc[base + ix as usize]
                                } else {
                                    T::ZERO
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Inverse of [`im2col`]: scatter-adds `cols` back into one sample's gradient.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], gx: &mut [T]) {
    let [d, h, w] = g.ind;
    let [od, oh, ow] = g.outd;
    let p = g.out_vox();
    let (k, s) = (g.k, g.stride);
    let pad = g.pad as isize;
    let mut row = 0;
    for c in 0..g.c {
        let gc = &mut gx[c * d * h * w..(c + 1) * d * h * w];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let iz = (z * s + kd) as isize - pad;
                        for y in 0..oh {
                            let iy = (y * s + kh) as isize - pad;
                            if iz < 0 || iz as usize >= d || iy < 0 || iy as usize >= h {
                                idx += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for xo in 0..ow {
                                let ix = (xo * s + kw) as isize - pad;
                                if ix >= 0 && (ix as usize) < w {
                                    gc[base + ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Zero-padded 3D convolution.
///
/// `input` is `[N,C,D,H,W]`, `kernel` is `[O,C,k,k,k]`, `bias` is `[O]`.
pub fn conv3d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernel, bias, stride, pad)?;
    let (rows, p) = (g.col_rows(), g.out_vox());
    let in_len = g.c * g.in_vox();
    let mut out = vec![T::ZERO; g.n * g.o * p];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; rows * p]
    };
    for n in 0..g.n {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let b: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        let out_n = &mut out[n * g.o * p..(n + 1) * g.o * p];
        for (o, chunk) in out_n.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        T::gemm(
            g.o,
            rows,
            p,
            T::ONE,
            kernel.data(),
            rows as isize,
            1,
            b,
            p as isize,
            1,
            T::ONE,
            out_n,
            p as isize,
            1,
        );
    }
    let [od, oh, ow] = g.outd;
    Tensor::new(vec![g.n, g.o, od, oh, ow], out)
}

pub struct Conv3dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv3d`] given the upstream gradient `grad_out`.
pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<Conv3dGrads<T>> {
    let g = conv_geom(input, kernel, bias, stride, pad)?;
    let (rows, p) = (g.col_rows(), g.out_vox());
    let in_len = g.c * g.in_vox();
    let mut gk = vec![T::ZERO; g.o * rows];
    let mut gb = vec![0f64; g.o];
    let mut gin = need_input.then(|| vec![T::ZERO; input.len()]);
    let mut cols = vec![T::ZERO; if g.is_pointwise() { 0 } else { rows * p }];
    let mut gcols = vec![T::ZERO; rows * p];
    for n in 0..g.n {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let go = &grad_out.data()[n * g.o * p..(n + 1) * g.o * p];
        for (o, chunk) in go.chunks(p).enumerate() {
            gb[o] += chunk.iter().map(|v| v.to_f64()).sum::<f64>();
        }
        let b: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut cols);
            &cols
        };
        // dK += dY · colsᵀ
        T::gemm(
            g.o, p, rows, T::ONE, go, p as isize, 1, b, 1, p as isize, T::ONE, &mut gk,
            rows as isize, 1,
        );
        if let Some(gin) = gin.as_mut() {
            // dcols = Kᵀ · dY
            T::gemm(
                rows,
                g.o,
                p,
                T::ONE,
                kernel.data(),
                1,
                rows as isize,
                go,
                p as isize,
                1,
                T::ZERO,
                &mut gcols,
                p as isize,
                1,
            );
            let gx = &mut gin[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                for (dst, &src) in gx.iter_mut().zip(&gcols) {
                    *dst += src;
                }
            } else {
                col2im(&g, &gcols, gx);
            }
        }
    }
    Ok(Conv3dGrads {
        input: gin.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.o], gb.into_iter().map(T::from_f64).collect())?,
    })
}

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input offset of the winning voxel for every output voxel.
    pub argmax: Vec<usize>,
}

/// 3D max pooling without padding; ties resolve to the first voxel in window order.
pub fn maxpool3d<T: Real>(input: &Tensor<T>, k: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    const OP: &str = "maxpool3d";
    let s = input.shape();
    if s.len() != 5 {
        return Err(shape_err(OP, format!("input must be [N,C,D,H,W], got {s:?}")));
    }
    if k == 0 || stride == 0 {
        return Err(shape_err(OP, "window and stride must be positive"));
    }
    let [d, h, w] = [s[2], s[3], s[4]];
    if k > d || k > h || k > w {
        return Err(shape_err(
            OP,
            format!("window {k} larger than input spatial extent {:?}", &s[2..]),
        ));
    }
    let (od, oh, ow) = ((d - k) / stride + 1, (h - k) / stride + 1, (w - k) / stride + 1);
    let planes = s[0] * s[1];
    let mut out = Vec::with_capacity(planes * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for pl in 0..planes {
        let base = pl * d * h * w;
        let x = &input.data()[base..base + d * h * w];
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = (z * stride * h + y * stride) * w + xo * stride;
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = ((z * stride + dz) * h + y * stride + dy) * w + xo * stride;
                            for dx in 0..k {
                                if x[row + dx] > x[best] {
                                    best = row + dx;
                                }
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(base + best);
                }
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new(vec![s[0], s[1], od, oh, ow], out)?,
        argmax,
    })
}

fn check_linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 2 || ws.len() != 2 {
        return Err(shape_err(OP, format!("expected [N,F] x [F,G], got {is:?} x {ws:?}")));
    }
    if is[1] != ws[0] {
        return Err(shape_err(
            OP,
            format!("inner dimensions disagree: input {is:?}, weight {ws:?}"),
        ));
    }
    if bias.shape() != [ws[1]] {
        return Err(shape_err(
            OP,
            format!("bias shape {:?} does not match weight {ws:?}", bias.shape()),
        ));
    }
    Ok((is[0], is[1], ws[1]))
}

/// Affine map `input · weight + bias` for `[N,F] · [F,G]`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f, g) = check_linear(input, weight, bias)?;
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(
        n, f, g, T::ONE, input.data(), f as isize, 1, weight.data(), g as isize, 1, T::ONE,
        &mut out, g as isize, 1,
    );
    Tensor::new(vec![n, g], out)
}

pub(crate) fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<[Tensor<T>; 3]> {
    let (n, f, g) = check_linear(input, weight, bias)?;
    let go = grad_out.data();
    let mut gx = vec![T::ZERO; n * f];
    T::gemm(
        n, g, f, T::ONE, go, g as isize, 1, weight.data(), 1, g as isize, T::ZERO, &mut gx,
        f as isize, 1,
    );
    let mut gw = vec![T::ZERO; f * g];
    T::gemm(
        f, n, g, T::ONE, input.data(), 1, f as isize, go, g as isize, 1, T::ZERO, &mut gw,
        g as isize, 1,
    );
    let gb = (0..g)
        .map(|j| T::from_f64((0..n).map(|i| go[i * g + j].to_f64()).sum()))
        .collect();
    Ok([
        Tensor::new(vec![n, f], gx)?,
        Tensor::new(vec![f, g], gw)?,
        Tensor::new(vec![g], gb)?,
    ])
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis`, computed with max-subtraction in 64-bit.
pub fn softmax<T: Real>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= input.ndim() {
        return Err(shape_err(
            "softmax",
            format!("axis {axis} out of range for shape {:?}", input.shape()),
        ));
    }
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let x = input.data();
    let mut out = vec![T::ZERO; x.len()];
    let mut buf = vec![0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let max = (0..len).map(|a| x[at(a)].to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (a, b) in buf.iter_mut().enumerate() {
                *b = (x[at(a)].to_f64() - max).exp();
                sum += *b;
            }
            for (a, b) in buf.iter().enumerate() {
                out[at(a)] = T::from_f64(b / sum);
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), grad_out.data());
    let mut gx = vec![T::ZERO; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let dot: f64 = (0..len).map(|a| yd[at(a)].to_f64() * gd[at(a)].to_f64()).sum();
            for a in 0..len {
                let j = at(a);
                gx[j] = T::from_f64(yd[j].to_f64() * (gd[j].to_f64() - dot));
            }
        }
    }
    Tensor {
        shape: y.shape().to_vec(),
        data: gx,
    }
}

/// Mean over all spatial axes: `[N,C,...] -> [N,C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() < 3 {
        return Err(shape_err(
            "global_avg_pool",
            format!("expected [N,C,spatial...], got {s:?}"),
        ));
    }
    let vox: usize = s[2..].iter().product();
    let out = input
        .data()
        .chunks(vox)
        .map(|c| T::from_f64(c.iter().map(|v| v.to_f64()).sum::<f64>() / vox as f64))
        .collect();
    Tensor::new(vec![s[0], s[1]], out)
}

fn check_head_mix<T: Real>(weights: &Tensor<T>, heads: &[&Tensor<T>]) -> Result<()> {
    const OP: &str = "head_mix";
    let ws = weights.shape();
    if ws.len() != 2 || ws[0] != heads.len() {
        return Err(shape_err(
            OP,
            format!("weights {ws:?} must be [H,M] with H = {} heads", heads.len()),
        ));
    }
    for (h, t) in heads.iter().enumerate() {
        let s = t.shape();
        if s.len() != 2 || s[1] != ws[1] || s[0] != heads[0].shape()[0] {
            return Err(shape_err(
                OP,
                format!("head {h} has shape {s:?}, expected [N,{}]", ws[1]),
            ));
        }
    }
    Ok(())
}

/// `out[n,m] = Σ_h weights[h,m] · heads[h][n,m]`.
pub fn head_mix<T: Real>(weights: &Tensor<T>, heads: &[&Tensor<T>]) -> Result<Tensor<T>> {
    check_head_mix(weights, heads)?;
    let m = weights.shape()[1];
    let n = heads[0].shape()[0];
    let w = weights.data();
    let out = (0..n * m)
        .map(|i| {
            let col = i % m;
            T::from_f64(
                heads
                    .iter()
                    .enumerate()
                    .map(|(h, t)| w[h * m + col].to_f64() * t.data()[i].to_f64())
                    .sum(),
            )
        })
        .collect();
    Tensor::new(vec![n, m], out)
}

/// Mean squared error over all elements, returned as a one-element tensor.
pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "mse_loss",
            format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p.to_f64() - t.to_f64();
            d * d
        })
        .sum();
    Ok(Tensor::scalar(T::from_f64(sum / pred.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Seven nested loops, straight from the definition.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (xs, ks) = (x.shape(), k.shape());
        let kk = ks[2];
        let od: Vec<usize> = (0..3).map(|a| (xs[2 + a] + 2 * p - kk) / s + 1).collect();
        let mut out = Tensor::zeros(&[xs[0], ks[0], od[0], od[1], od[2]]);
        for n in 0..xs[0] {
            for o in 0..ks[0] {
                for z in 0..od[0] {
                    for y in 0..od[1] {
                        for xx in 0..od[2] {
                            let mut acc = b.data()[o];
                            for c in 0..xs[1] {
                                for dz in 0..kk {
                                    for dy in 0..kk {
                                        for dx in 0..kk {
                                            let iz = (s * z + dz) as isize - p as isize;
                                            let iy = (s * y + dy) as isize - p as isize;
                                            let ix = (s * xx + dx) as isize - p as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= xs[2] || iy >= xs[3] || ix >= xs[4] {
                                                continue;
                                            }
                                            acc += k.at(&[o, c, dz, dy, dx]) * x.at(&[n, c, iz, iy, ix]);
                                        }
                                    }
                                }
                            }
                            let off = out.offset(&[n, o, z, y, xx]);
                            out.data_mut()[off] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 1, 4, 5, 3], &mut rng).cast::<f32>();
        let k = Tensor::full(&[1, 1, 1, 1, 1], 1.0f32);
        let y = conv3d(&x, &k, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let x = Tensor::full(&[2, 2, 4, 4, 4], 3.0f32);
        let k = Tensor::zeros(&[3, 2, 3, 3, 3]);
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv3d(&x, &k, &b, 1, 1).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                for i in 0..64 {
                    assert_eq!(y.data()[(n * 3 + o) * 64 + i], b.data()[o]);
                }
            }
        }
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[1, 2, 6, 6, 6], &mut rng);
        let k = random(&[3, 2, 3, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let oracle = naive_conv(&x, &k, &b, 2, 1);
        let got = conv3d(&x.cast::<f32>(), &k.cast(), &b.cast(), 2, 1).unwrap();
        assert_eq!(got.shape(), oracle.shape());
        // Relative to the output's largest magnitude.
        let scale = oracle.data().iter().fold(0f64, |m, v| m.max(v.abs()));
        for (g, o) in got.data().iter().zip(oracle.data()) {
            let rel = (*g as f64 - o).abs() / scale;
            assert!(rel < 1e-5, "{g} vs {o}");
        }
        // Non-cubic, pointwise and unpadded variants.
        for (shape, ks, s, p) in [
            ([2, 3, 5, 4, 6], 1, 1, 0),
            ([1, 2, 5, 7, 4], 3, 1, 0),
            ([2, 1, 4, 4, 4], 1, 2, 0),
            ([1, 2, 3, 3, 3], 3, 2, 2),
        ] {
            let x = random(&shape, &mut rng);
            let k = random(&[2, shape[1], ks, ks, ks], &mut rng);
            let b = random(&[2], &mut rng);
            let oracle = naive_conv(&x, &k, &b, s, p);
            let got = conv3d(&x, &k, &b, s, p).unwrap();
            assert_eq!(got.shape(), oracle.shape());
            for (g, o) in got.data().iter().zip(oracle.data()) {
                assert!((g - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3, 3]);
        let msg = conv3d(&x, &k, &Tensor::zeros(&[1]), 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4, 4]") && msg.contains("[1, 3, 3, 3, 3]"), "{msg}");
        let big = Tensor::zeros(&[1, 2, 7, 7, 7]);
        assert!(conv3d(&x, &big, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn conv_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 8, 8, 8], &mut rng).cast::<f32>();
        let k = random(&[4, 3, 3, 3, 3], &mut rng).cast::<f32>();
        let b = random(&[4], &mut rng).cast::<f32>();
        let a = conv3d(&x, &k, &b, 1, 1).unwrap();
        let c = conv3d(&x, &k, &b, 1, 1).unwrap();
        assert!(a.data().iter().zip(c.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    fn naive_pool(x: &Tensor<f64>, k: usize, s: usize) -> Tensor<f64> {
        let xs = x.shape();
        let od: Vec<usize> = (0..3).map(|a| (xs[2 + a] - k) / s + 1).collect();
        let mut out = Tensor::zeros(&[xs[0], xs[1], od[0], od[1], od[2]]);
        for n in 0..xs[0] {
            for c in 0..xs[1] {
                for z in 0..od[0] {
                    for y in 0..od[1] {
                        for xx in 0..od[2] {
                            let mut m = f64::NEG_INFINITY;
                            for dz in 0..k {
                                for dy in 0..k {
                                    for dx in 0..k {
                                        m = m.max(x.at(&[n, c, s * z + dz, s * y + dy, s * xx + dx]));
                                    }
                                }
                            }
                            let off = out.offset(&[n, c, z, y, xx]);
                            out.data_mut()[off] = m;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn maxpool_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[1, 1, 4, 4, 4], &mut rng);
        assert_eq!(maxpool3d(&x, 2, 2).unwrap().output, naive_pool(&x, 2, 2));
        let x = random(&[2, 3, 5, 6, 7], &mut rng);
        assert_eq!(maxpool3d(&x, 3, 2).unwrap().output, naive_pool(&x, 3, 2));
    }

    #[test]
    fn maxpool_constant_and_spike() {
        let x = Tensor::full(&[1, 1, 4, 4, 4], 2.0f32);
        let out = maxpool3d(&x, 2, 2).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 2.0));
        let mut uniq = out.argmax.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 8, "one winner per window");

        let mut x = Tensor::zeros(&[1, 1, 4, 4, 4]);
        let spike = x.offset(&[0, 0, 1, 2, 1]);
        x.data_mut()[spike] = 9.0f32;
        let out = maxpool3d(&x, 2, 1).unwrap();
        for z in 0..3 {
            for y in 0..3 {
                for xx in 0..3 {
                    let contains = (z..z + 2).contains(&1) && (y..y + 2).contains(&2) && (xx..xx + 2).contains(&1);
                    assert_eq!(out.output.at(&[0, 0, z, y, xx]) == 9.0, contains);
                }
            }
        }
        assert!(maxpool3d(&x, 5, 1).is_err());
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::new(vec![1, 2], vec![3.0f32, 4.0]).unwrap();
        let w = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let y = linear(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[7.0]);

        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0f32 } else { 0.0 });
        let x = Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5);
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 8], &mut rng);
        let w = random(&[8, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let y = linear(&x.cast::<f32>(), &w.cast(), &b.cast()).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let want: f64 = b.data()[j] + (0..8).map(|f| x.at(&[i, f]) * w.at(&[f, j])).sum::<f64>();
                assert!((y.at(&[i, j]) as f64 - want).abs() < 1e-5 * want.abs().max(1.0));
            }
        }
        assert!(linear(&x, &random(&[7, 3], &mut rng), &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::full(&[4], 0.3f64);
        assert_eq!(softmax(&x, 0).unwrap().data(), &[0.25; 4]);
        assert!(softmax(&x, 1).is_err());
        let x = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 5.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        for m in 0..3 {
            assert!((y.at(&[0, m]) + y.at(&[1, m]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mse_examples() {
        let p = Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        assert_eq!(mse(&p, &p).unwrap().data(), &[0.0]);
        let t = Tensor::zeros(&[1, 2]);
        assert_eq!(mse(&p, &t).unwrap().data(), &[2.5]);
        assert!(mse(&p, &Tensor::zeros(&[2, 1])).is_err());
    }
}
