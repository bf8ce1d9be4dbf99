use crate::error::{shape_err, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::tensor::{Element, Tensor};

/// Pooled extent with floor semantics; trailing voxels that do not fill a
/// whole window are dropped.
pub fn pool_output_extent(input: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || input < window {
        return None;
    }
    Some((input - window) / stride + 1)
}

fn pool_dims(shape: &[usize], window: usize, stride: usize) -> Result<[usize; 3]> {
    let &[_, _, d, h, w] = shape else {
        return shape_err(format!("avgpool3d needs [N,C,D,H,W], got {shape:?}"));
    };
    match (
        pool_output_extent(d, window, stride),
        pool_output_extent(h, window, stride),
        pool_output_extent(w, window, stride),
    ) {
        (Some(a), Some(b), Some(c)) => Ok([a, b, c]),
        _ => shape_err(format!("pool window {window} does not fit {d}x{h}x{w}")),
    }
}

/// Calls `f(in_index, out_index)` for every tap of every window.
fn for_each_tap(shape: &[usize], window: usize, stride: usize, mut f: impl FnMut(usize, usize)) {
    let [d, h, w] = [shape[2], shape[3], shape[4]];
    let [od, oh, ow] = pool_dims(shape, window, stride).expect("validated on forward");
    for nc in 0..shape[0] * shape[1] {
        let (ibase, obase) = (nc * d * h * w, nc * od * oh * ow);
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = obase + (oz * oh + oy) * ow + ox;
                    for kz in 0..window {
                        for ky in 0..window {
                            let row = ibase + ((oz * stride + kz) * h + oy * stride + ky) * w + ox * stride;
                            for kx in 0..window {
                                f(row + kx, o);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_backward<T: Element>(
    shape: &[usize],
    window: usize,
    stride: usize,
    dy: &[T],
    input: Var,
    grads: &mut Grads<'_, T>,
) {
    if !grads.wants(input) {
        return;
    }
    let scale = T::from_f64_lossy(1.0 / (window * window * window) as f64);
    let dx = grads.slot(input);
    for_each_tap(shape, window, stride, |i, o| dx[i] += dy[o] * scale);
}

pub(crate) fn gap_backward<T: Element>(shape: &[usize], dy: &[T], input: Var, grads: &mut Grads<'_, T>) {
    if !grads.wants(input) {
        return;
    }
    let s: usize = shape[2..].iter().product();
    let scale = T::from_f64_lossy(1.0 / s as f64);
    let dx = grads.slot(input);
    for (chunk, &g) in dx.chunks_mut(s).zip(dy) {
        chunk.iter_mut().for_each(|v| *v += g * scale);
    }
}

impl<T: Element> Graph<T> {
    /// Mean over non-overlapping (for `stride == window`) cubic windows.
    pub fn avgpool3d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let [od, oh, ow] = pool_dims(&shape, window, stride)?;
        let x = self.value(input).data();
        let mut out = vec![T::zero(); shape[0] * shape[1] * od * oh * ow];
        for_each_tap(&shape, window, stride, |i, o| out[o] += x[i]);
        let scale = T::from_f64_lossy(1.0 / (window * window * window) as f64);
        out.iter_mut().for_each(|v| *v *= scale);
        let value = Tensor::from_parts(vec![shape[0], shape[1], od, oh, ow], out);
        Ok(self.push(value, Op::AvgPool3d { input, window, stride }, &[input]))
    }

    /// `[N,C,D,H,W] -> [N,C]`, the spatial mean of every feature map.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 5 {
            return shape_err(format!("global_avg_pool needs [N,C,D,H,W], got {shape:?}"));
        }
        let s: usize = shape[2..].iter().product();
        let x = self.value(input).data();
        let out = x
            .chunks(s)
            .map(|c| T::from_f64_lossy(c.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / s as f64))
            .collect();
        let value = Tensor::from_parts(vec![shape[0], shape[1]], out);
        Ok(self.push(value, Op::GlobalAvgPool { input }, &[input]))
    }
}
