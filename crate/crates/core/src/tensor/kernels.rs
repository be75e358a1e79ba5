//! Raw numeric kernels used by the tape. No allocation policy, no shape
//! checks: callers validate first.

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *o += s;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Spatial geometry of a windowed NHWC operation with "same" zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn same(batch: usize, in_h: usize, in_w: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(in_w);
        ConvGeometry {
            batch,
            in_h,
            in_w,
            channels,
            kernel,
            stride,
            out_h,
            out_w,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Input coordinate for output `(oy, ox)` and kernel tap `(ky, kx)`,
    /// or `None` when it falls in the padding.
    #[inline]
    pub(crate) fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad_top as isize;
        let x = (ox * self.stride + kx) as isize - self.pad_left as isize;
        if y < 0 || x < 0 || y >= self.in_h as isize || x >= self.in_w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    pub(crate) fn out_positions(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Gathers `[positions, k*k*c]` patches.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let c = g.channels;
    let patch = g.kernel * g.kernel * c;
    let mut cols = vec![0.0; g.out_positions() * patch];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &x[b * g.in_h * g.in_w * c..(b + 1) * g.in_h * g.in_w * c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            let off = (ky * g.kernel + kx) * c;
                            let src = (y * g.in_w + x) * c;
                            dst[off..off + c].copy_from_slice(&img[src..src + c]);
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds patch gradients back into an input-shaped buffer.
pub(crate) fn col2im_acc(dcols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let c = g.channels;
    let patch = g.kernel * g.kernel * c;
    let mut row = 0;
    for b in 0..g.batch {
        let base = b * g.in_h * g.in_w * c;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &dcols[row * patch..(row + 1) * patch];
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            let off = (ky * g.kernel + kx) * c;
                            let dst = base + (y * g.in_w + x) * c;
                            for ch in 0..c {
                                dx[dst + ch] += src[off + ch];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
