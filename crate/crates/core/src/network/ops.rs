//! Feature-map kernels with hand-written adjoints.
//!
//! Feature maps are `(channels, height * width)` row-major matrices so that a
//! 3x3 convolution becomes one GEMM against an im2col buffer.

use ndarray::{Array1, Array2, Axis};

use super::Real;

/// A stack of channels at one spatial resolution.
#[derive(Clone, Debug)]
pub struct FeatureMap<T> {
    pub data: Array2<T>,
    pub height: usize,
    pub width: usize,
}

impl<T: Real> FeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((channels, height * width)),
            height,
            width,
        }
    }
}

/// Lays out the 3x3 zero-padded neighbourhoods as rows `c * 9 + ky * 3 + kx`.
pub fn im2col<T: Real>(x: &FeatureMap<T>) -> Array2<T> {
    let (h, w) = (x.height, x.width);
    let channels = x.channels();
    let mut cols = Array2::<T>::zeros((channels * 9, h * w));
    let src = x.data.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    let hw = h * w;
    for c in 0..channels {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut dst[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                let (x_lo, x_hi) = column_span(kx, w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    let out = &mut row[y * w + x_lo..y * w + x_hi];
                    let src_lo = sy * w + x_lo + kx - 1;
                    out.copy_from_slice(&plane[src_lo..src_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Destination columns `[lo, hi)` whose source `x + kx - 1` is in bounds.
#[inline]
fn column_span(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the map.
pub fn col2im<T: Real>(cols: &Array2<T>, channels: usize, height: usize, width: usize) -> FeatureMap<T> {
    let (h, w) = (height, width);
    let hw = h * w;
    let mut out = FeatureMap::zeros(channels, h, w);
    let src = cols.as_slice().expect("standard layout");
    let dst = out.data.as_slice_mut().expect("standard layout");
    for c in 0..channels {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &src[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                let (x_lo, x_hi) = column_span(kx, w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let sy = sy - 1;
                    let from = &row[y * w + x_lo..y * w + x_hi];
                    let dst_lo = sy * w + x_lo + kx - 1;
                    for (d, s) in plane[dst_lo..dst_lo + (x_hi - x_lo)].iter_mut().zip(from) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

/// `weight (out, in*9) x cols + bias`.
pub fn conv3x3<T: Real>(
    weight: &Array2<T>,
    bias: &Array1<T>,
    cols: &Array2<T>,
    height: usize,
    width: usize,
) -> FeatureMap<T> {
    // (HW x K) x (K x out) runs faster in BLAS than the untransposed product
    let data = cols.t().dot(&weight.t()).reversed_axes();
    let mut data = data.as_standard_layout().into_owned();
    for (mut row, &b) in data.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        if b != T::zero() {
            row.mapv_inplace(|v| v + b);
        }
    }
    FeatureMap {
        data,
        height,
        width,
    }
}

/// Accumulates weight and bias gradients; returns the input gradient if asked.
pub fn conv3x3_backward<T: Real>(
    weight: &Array2<T>,
    cols: &Array2<T>,
    grad_out: &Array2<T>,
    grad_weight: &mut Array2<T>,
    grad_bias: &mut Array1<T>,
    input_shape: Option<(usize, usize, usize)>,
) -> Option<FeatureMap<T>> {
    let grad_weight_t = cols.dot(&grad_out.t());
    *grad_weight += &grad_weight_t.t();
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.axis_iter(Axis(0))) {
        *gb += row.sum();
    }
    input_shape.map(|(channels, height, width)| {
        col2im(&weight.t().dot(grad_out), channels, height, width)
    })
}

pub fn relu_inplace<T: Real>(x: &mut FeatureMap<T>) {
    x.data.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes gradient entries where the (post-activation) output was not positive.
pub fn relu_backward_inplace<T: Real>(grad: &mut Array2<T>, output: &Array2<T>) {
    ndarray::Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
}

/// 2x2 max pooling with stride 2; returns the flat argmax of every window.
pub fn max_pool2<T: Real>(x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<u32>) {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h / 2, w / 2);
    let channels = x.channels();
    let mut out = FeatureMap::zeros(channels, oh, ow);
    let mut argmax = vec![0u32; channels * oh * ow];
    let src = x.data.as_slice().expect("standard layout");
    let dst = out.data.as_slice_mut().expect("standard layout");
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if plane[idx] > plane[best] {
                        best = idx;
                    }
                }
                let o = c * oh * ow + oy * ow + ox;
                dst[o] = plane[best];
                argmax[o] = best as u32;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward<T: Real>(
    grad: &FeatureMap<T>,
    argmax: &[u32],
    height: usize,
    width: usize,
) -> FeatureMap<T> {
    let channels = grad.channels();
    let mut out = FeatureMap::zeros(channels, height, width);
    let ohw = grad.height * grad.width;
    let src = grad.data.as_slice().expect("standard layout");
    let dst = out.data.as_slice_mut().expect("standard layout");
    for c in 0..channels {
        for i in 0..ohw {
            let o = c * ohw + i;
            dst[c * height * width + argmax[o] as usize] += src[o];
        }
    }
    out
}

/// Source taps for 2x bilinear upsampling with half-pixel centres and edge clamping.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let channels = x.channels();
    let mut out = FeatureMap::zeros(channels, oh, ow);
    let src = x.data.as_slice().expect("standard layout");
    let dst = out.data.as_slice_mut().expect("standard layout");
    let mut rows = vec![T::zero(); ow * h];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        // horizontal pass into `rows` (h x ow), then vertical into the output
        for y in 0..h {
            for (ox, &(x0, x1, f)) in tx.iter().enumerate() {
                let f = T::from_f64(f).unwrap();
                rows[y * ow + ox] = plane[y * w + x0] * (T::one() - f) + plane[y * w + x1] * f;
            }
        }
        let oplane = &mut dst[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(y0, y1, f)) in ty.iter().enumerate() {
            let f = T::from_f64(f).unwrap();
            let g = T::one() - f;
            for ox in 0..ow {
                oplane[oy * ow + ox] = rows[y0 * ow + ox] * g + rows[y1 * ow + ox] * f;
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad: &FeatureMap<T>, height: usize, width: usize) -> FeatureMap<T> {
    let (h, w) = (height, width);
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let channels = grad.channels();
    let mut out = FeatureMap::zeros(channels, h, w);
    let src = grad.data.as_slice().expect("standard layout");
    let dst = out.data.as_slice_mut().expect("standard layout");
    let mut rows = vec![T::zero(); ow * h];
    for c in 0..channels {
        rows.iter_mut().for_each(|v| *v = T::zero());
        let gplane = &src[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(y0, y1, f)) in ty.iter().enumerate() {
            let f = T::from_f64(f).unwrap();
            let g = T::one() - f;
            for ox in 0..ow {
                let v = gplane[oy * ow + ox];
                rows[y0 * ow + ox] += v * g;
                rows[y1 * ow + ox] += v * f;
            }
        }
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for (ox, &(x0, x1, f)) in tx.iter().enumerate() {
                let f = T::from_f64(f).unwrap();
                let v = rows[y * ow + ox];
                plane[y * w + x0] += v * (T::one() - f);
                plane[y * w + x1] += v * f;
            }
        }
    }
    out
}

/// Stacks `a` above `b` along the channel axis.
pub fn concat<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> FeatureMap<T> {
    debug_assert_eq!((a.height, a.width), (b.height, b.width));
    let data = ndarray::concatenate(Axis(0), &[a.data.view(), b.data.view()])
        .expect("matching spatial size");
    FeatureMap {
        data,
        height: a.height,
        width: a.width,
    }
}

/// Splits a concatenated gradient back into its two parts.
pub fn split<T: Real>(grad: FeatureMap<T>, first: usize) -> (FeatureMap<T>, FeatureMap<T>) {
    let (h, w) = (grad.height, grad.width);
    let (a, b) = grad.data.view().split_at(Axis(0), first);
    (
        FeatureMap {
            data: a.to_owned(),
            height: h,
            width: w,
        },
        FeatureMap {
            data: b.to_owned(),
            height: h,
            width: w,
        },
    )
}
