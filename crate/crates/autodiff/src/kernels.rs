//! Raw array kernels shared by the forward and backward rules in [`crate::graph`].
//!
//! All images are dense `[N, C, H, W]` row-major buffers.

use crate::element::Real;

/// Geometry of a 2-D convolution applied to one `[C, H, W]` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel does not fit the padded input.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kernel_h == 0 || kernel_w == 0 {
            return None;
        }
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if ph < kernel_h || pw < kernel_w {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            pad,
            out_h: (ph - kernel_h) / stride + 1,
            out_w: (pw - kernel_w) / stride + 1,
        })
    }

    /// Rows of the column matrix: `C * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds a batch of images into `cols[patch_len, n * out_len]`.
pub fn im2col<T: Real>(x: &[T], n: usize, g: &ConvGeom, cols: &mut [T]) {
    let l = g.out_len();
    let row_stride = n * l;
    debug_assert_eq!(cols.len(), g.patch_len() * row_stride);
    let pad = g.pad as isize;
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let row_base = row * row_stride;
                for b in 0..n {
                    let img = &x[b * g.image_len() + c * g.height * g.width..][..g.height * g.width];
                    let dst = &mut cols[row_base + b * l..][..l];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        let drow = &mut dst[oy * g.out_w..][..g.out_w];
                        if iy < 0 || iy >= g.height as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &img[iy as usize * g.width..][..g.width];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - pad;
                            *d = if ix < 0 || ix >= g.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into image positions of `x`.
pub fn col2im<T: Real>(cols: &[T], n: usize, g: &ConvGeom, x: &mut [T]) {
    let l = g.out_len();
    let row_stride = n * l;
    let pad = g.pad as isize;
    for c in 0..g.channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let row_base = row * row_stride;
                for b in 0..n {
                    let img = &mut x[b * g.image_len() + c * g.height * g.width..][..g.height * g.width];
                    let src = &cols[row_base + b * l..][..l];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ki) as isize - pad;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let drow = &mut img[iy as usize * g.width..][..g.width];
                        let srow = &src[oy * g.out_w..][..g.out_w];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - pad;
                            if ix >= 0 && ix < g.width as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, L]` -> `[C, N, L]`.
pub fn swap_leading<T: Real>(src: &[T], n: usize, c: usize, l: usize, dst: &mut [T]) {
    for b in 0..n {
        for ch in 0..c {
            dst[(ch * n + b) * l..][..l].copy_from_slice(&src[(b * c + ch) * l..][..l]);
        }
    }
}

/// 2x2 max pooling with stride 2; records the flat argmax of every window.
pub fn max_pool2x2<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                out[o] = x[best];
                argmax[o] = best as u32;
            }
        }
    }
}

/// Source taps for one axis of 2x bilinear upsampling (half-pixel centers, edge clamped).
pub fn upsample_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2x<T: Real>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
}

pub fn upsample2x_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize, dx: &mut [T]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &dy[p * oh * ow..][..oh * ow];
        let dst = &mut dx[p * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let g = src[oy * ow + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                dst[y0 * w + x0] += gt * (T::one() - fx);
                dst[y0 * w + x1] += gt * fx;
                dst[y1 * w + x0] += gb * (T::one() - fx);
                dst[y1 * w + x1] += gb * fx;
            }
        }
    }
}

/// Per-channel mean and biased variance of `[N, C, L]` data.
pub fn channel_moments<T: Real>(x: &[T], n: usize, c: usize, l: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_f64((n * l) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += x[(b * c + ch) * l..][..l].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            for &e in &x[(b * c + ch) * l..][..l] {
                v += (e - m) * (e - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}
