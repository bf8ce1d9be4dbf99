//! 3-d cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{gemm, Element, MatView, Tensor};

/// Output extent of a strided, zero-padded window along one axis, or `None`
/// when the kernel does not fit the padded input.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Resolved sizes of one conv3d call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[D, H, W]`
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub out_dims: [usize; 3],
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 5], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [n, c, d, h, w] = input;
        let &[k, wc, kd, kh, kw] = weight else {
            return shape_err(format!("conv3d weight must be [K,C,kd,kh,kw], got {weight:?}"));
        };
        if wc != c {
            return shape_err(format!("conv3d weight expects {wc} input channels, input has {c}"));
        }
        if stride == 0 {
            return shape_err("conv3d stride must be >= 1");
        }
        let extent = |i, k| conv_output_extent(i, k, stride, padding);
        let (Some(od), Some(oh), Some(ow)) = (extent(d, kd), extent(h, kh), extent(w, kw)) else {
            return shape_err(format!(
                "kernel {kd}x{kh}x{kw} does not fit input {d}x{h}x{w} with padding {padding}"
            ));
        };
        Ok(Self {
            batch: n,
            in_channels: c,
            out_channels: k,
            in_dims: [d, h, w],
            kernel: [kd, kh, kw],
            out_dims: [od, oh, ow],
            stride,
            padding,
        })
    }

    fn in_spatial(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_spatial(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// 1×1×1, stride 1, no padding: the input sample already is its own column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self) -> [usize; 5] {
        let [od, oh, ow] = self.out_dims;
        [self.batch, self.out_channels, od, oh, ow]
    }
}

/// Output positions `[lo, hi)` whose tap at kernel offset `k` lands inside the input.
fn valid_range(k: usize, stride: usize, pad: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n_in + pad <= k { 0 } else { ((n_in - 1 + pad - k) / stride + 1).min(n_out) };
    (lo.min(hi), hi)
}

fn im2col<T: Element>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let [kd, kh, kw] = g.kernel;
    let (s, pad) = (g.stride, g.padding);
    let p = g.out_spatial();
    for c in 0..g.in_channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            let (z0, z1) = valid_range(kz, s, pad, d, od);
            for ky in 0..kh {
                let (y0, y1) = valid_range(ky, s, pad, h, oh);
                for kx in 0..kw {
                    let (x0, x1) = valid_range(kx, s, pad, w, ow);
                    let row = ((c * kd + kz) * kh + ky) * kw + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    dst.fill(T::zero());
                    for oz in z0..z1 {
                        let iz = oz * s + kz - pad;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - pad;
                            let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let out = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            if s == 1 {
                                let ix0 = x0 + kx - pad;
                                out[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                            } else {
                                for ox in x0..x1 {
                                    out[ox] = src[ox * s + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let [d, h, w] = g.in_dims;
    let [od, oh, ow] = g.out_dims;
    let [kd, kh, kw] = g.kernel;
    let (s, pad) = (g.stride, g.padding);
    let p = g.out_spatial();
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..kd {
            let (z0, z1) = valid_range(kz, s, pad, d, od);
            for ky in 0..kh {
                let (y0, y1) = valid_range(ky, s, pad, h, oh);
                for kx in 0..kw {
                    let (x0, x1) = valid_range(kx, s, pad, w, ow);
                    let row = ((c * kd + kz) * kh + ky) * kw + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oz in z0..z1 {
                        let iz = oz * s + kz - pad;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - pad;
                            let dst = &mut dxc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                            let taps = &src[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                            for ox in x0..x1 {
                                dst[ox * s + kx - pad] += taps[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeometry) -> Vec<T> {
    let (p, r, k) = (g.out_spatial(), g.col_rows(), g.out_channels);
    let in_per = g.in_channels * g.in_spatial();
    let mut out = vec![T::zero(); g.batch * k * p];
    out.par_chunks_mut(k * p).enumerate().for_each(|(n, out_n)| {
        let xn = &x[n * in_per..(n + 1) * in_per];
        let owned;
        let col: &[T] = if g.is_pointwise() {
            xn
        } else {
            let mut buf = vec![T::zero(); r * p];
            im2col(xn, g, &mut buf);
            owned = buf;
            &owned
        };
        gemm(T::one(), MatView::row_major(weight, k, r), MatView::row_major(col, r, p), T::zero(), out_n);
        for (row, &b) in out_n.chunks_mut(p).zip(bias) {
            row.iter_mut().for_each(|v| *v += b);
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Element>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeometry,
    input: Var,
    weight_var: Var,
    bias_var: Var,
    grads: &mut Grads<'_, T>,
) {
    let (p, r, k) = (g.out_spatial(), g.col_rows(), g.out_channels);
    let in_per = g.in_channels * g.in_spatial();
    let need_dx = grads.wants(input);
    let need_dw = grads.wants(weight_var);

    // Per-sample partial weight gradients, reduced in sample order so the
    // result does not depend on thread scheduling.
    let per_sample = |n: usize, dx_n: Option<&mut [T]>| -> Option<Vec<T>> {
        let dy_n = &dy[n * k * p..(n + 1) * k * p];
        let xn = &x[n * in_per..(n + 1) * in_per];
        let dw = need_dw.then(|| {
            let owned;
            let col: &[T] = if g.is_pointwise() {
                xn
            } else {
                let mut buf = vec![T::zero(); r * p];
                im2col(xn, g, &mut buf);
                owned = buf;
                &owned
            };
            let mut dw = vec![T::zero(); k * r];
            gemm(T::one(), MatView::row_major(dy_n, k, p), MatView::transposed(col, r, p), T::zero(), &mut dw);
            dw
        });
        if let Some(dx_n) = dx_n {
            let wt = MatView::transposed(weight, k, r);
            if g.is_pointwise() {
                gemm(T::one(), wt, MatView::row_major(dy_n, k, p), T::one(), dx_n);
            } else {
                let mut dcol = vec![T::zero(); r * p];
                gemm(T::one(), wt, MatView::row_major(dy_n, k, p), T::zero(), &mut dcol);
                col2im(&dcol, g, dx_n);
            }
        }
        dw
    };

    let partials: Vec<Option<Vec<T>>> = if need_dx {
        let dx = grads.slot(input);
        dx.par_chunks_mut(in_per).enumerate().map(|(n, c)| per_sample(n, Some(c))).collect()
    } else if need_dw {
        (0..g.batch).into_par_iter().map(|n| per_sample(n, None)).collect()
    } else {
        Vec::new()
    };

    if need_dw {
        let dw = grads.slot(weight_var);
        for part in partials.into_iter().flatten() {
            dw.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
    }
    if grads.wants(bias_var) {
        let db = grads.slot(bias_var);
        for dy_n in dy.chunks(k * p) {
            for (acc, row) in db.iter_mut().zip(dy_n.chunks(p)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
    }
}

impl<T: Element> Graph<T> {
    /// Cross-correlation of `input [N,C,D,H,W]` with `weight [K,C,kd,kh,kw]`,
    /// plus `bias [K]`, at the given stride and symmetric zero padding.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.value(input).dims5()?, self.shape(weight), stride, padding)?;
        if self.shape(bias) != [geom.out_channels] {
            return shape_err(format!(
                "conv3d bias must be [{}], got {:?}",
                geom.out_channels,
                self.shape(bias)
            ));
        }
        let out = forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), &geom);
        let value = Tensor::from_parts(geom.output_shape().to_vec(), out);
        Ok(self.push(value, Op::Conv3d { input, weight, bias, geom }, &[input, weight, bias]))
    }
}
