//! Forward and backward kernels on raw `[B, C, H, W]` buffers.

use super::linalg::{gemm, gemm_nt, sum, transpose};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Static shape of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn new(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || b.len() != 1 {
            return Err(Error::Shape(format!(
                "conv2d expects x[B,C,H,W], w[F,C,k,k], b[F]; got {x:?}, {w:?}, {b:?}"
            )));
        }
        if w[1] != x[1] {
            return Err(Error::Shape(format!(
                "conv2d weight expects {} input channels, input has {}",
                w[1], x[1]
            )));
        }
        if w[2] != w[3] || w[2].is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "conv2d kernel must be square and odd, got {w:?}"
            )));
        }
        if b[0] != w[0] {
            return Err(Error::Shape(format!(
                "bias length {} != filters {}",
                b[0], w[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let k = w[2];
        if x[2] + 2 * pad < k || x[3] + 2 * pad < k {
            return Err(Error::Shape(format!(
                "input {}x{} too small for kernel {k} with pad {pad}",
                x[2], x[3]
            )));
        }
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            height: x[2],
            width: x[3],
            filters: w[0],
            kernel: k,
            stride,
            pad,
        })
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.width + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn out_dims(&self) -> [usize; 4] {
        let (ho, wo) = self.out_hw();
        [self.batch, self.filters, ho, wo]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.pad == 0 && self.stride == 1
    }
}

/// Output index range `[lo, hi)` whose input coordinate `o·s + off` lies in `[0, n)`.
fn valid_range(n_out: usize, n_in: usize, s: usize, off: isize) -> (usize, usize) {
    let s = s as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = ((n_in as isize - 1 - off).div_euclid(s) + 1).clamp(0, n_out as isize);
    (lo as usize, (hi as usize).max(lo as usize))
}

fn im2col<T: Scalar>(sh: &ConvShape, x: &[T], col: &mut [T]) {
    let (ho, wo) = sh.out_hw();
    let (h, w, k, s) = (sh.height, sh.width, sh.kernel, sh.stride);
    let p = ho * wo;
    col.fill(T::default());
    for c in 0..sh.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(ho, h, s, ky as isize - sh.pad as isize);
            for kx in 0..k {
                let off_x = kx as isize - sh.pad as isize;
                let (x_lo, x_hi) = valid_range(wo, w, s, off_x);
                let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - sh.pad;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let ix0 = (x_lo as isize + off_x) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            dst[ox] = src[(ox as isize * s as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(sh: &ConvShape, col: &[T], dx: &mut [T]) {
    let (ho, wo) = sh.out_hw();
    let (h, w, k, s) = (sh.height, sh.width, sh.kernel, sh.stride);
    let p = ho * wo;
    for c in 0..sh.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(ho, h, s, ky as isize - sh.pad as isize);
            for kx in 0..k {
                let off_x = kx as isize - sh.pad as isize;
                let (x_lo, x_hi) = valid_range(wo, w, s, off_x);
                let row = &col[((c * k + ky) * k + kx) * p..][..p];
                for oy in y_lo..y_hi {
                    let iy = oy * s + ky - sh.pad;
                    let src = &row[oy * wo..(oy + 1) * wo];
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    for ox in x_lo..x_hi {
                        dst[(ox as isize * s as isize + off_x) as usize] += src[ox];
                    }
                }
            }
        }
    }
}

/// Zero-padded cross-correlation. Each output is `b[f]` plus the products
/// accumulated in `(c, ky, kx)` order.
pub fn conv2d_forward<T: Scalar>(sh: &ConvShape, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let (ho, wo) = sh.out_hw();
    let p = ho * wo;
    let kk = sh.patch_len();
    let in_len = sh.in_channels * sh.height * sh.width;
    let mut out = vec![T::default(); sh.batch * sh.filters * p];
    let mut col = if sh.is_pointwise() {
        Vec::new()
    } else {
        vec![T::default(); kk * p]
    };
    for bi in 0..sh.batch {
        let xb = &x[bi * in_len..(bi + 1) * in_len];
        let ob = &mut out[bi * sh.filters * p..(bi + 1) * sh.filters * p];
        for f in 0..sh.filters {
            ob[f * p..(f + 1) * p].fill(b[f]);
        }
        let cols: &[T] = if sh.is_pointwise() {
            xb
        } else {
            im2col(sh, xb, &mut col);
            &col
        };
        gemm(sh.filters, p, kk, w, cols, ob);
    }
    out
}

/// Accumulates gradients for input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    sh: &ConvShape,
    x: &[T],
    w: &[T],
    dout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ho, wo) = sh.out_hw();
    let p = ho * wo;
    let kk = sh.patch_len();
    let in_len = sh.in_channels * sh.height * sh.width;
    let out_len = sh.filters * p;
    if let Some(db) = db {
        for bi in 0..sh.batch {
            for f in 0..sh.filters {
                db[f] += sum(&dout[bi * out_len + f * p..bi * out_len + (f + 1) * p]);
            }
        }
    }
    if let Some(dw) = dw {
        let mut col = if sh.is_pointwise() {
            Vec::new()
        } else {
            vec![T::default(); kk * p]
        };
        for bi in 0..sh.batch {
            let xb = &x[bi * in_len..(bi + 1) * in_len];
            let cols: &[T] = if sh.is_pointwise() {
                xb
            } else {
                im2col(sh, xb, &mut col);
                &col
            };
            gemm_nt(
                sh.filters,
                kk,
                p,
                &dout[bi * out_len..(bi + 1) * out_len],
                cols,
                dw,
            );
        }
    }
    if let Some(dx) = dx {
        let wt = transpose(sh.filters, kk, w);
        let mut dcol = vec![T::default(); kk * p];
        for bi in 0..sh.batch {
            let dxb = &mut dx[bi * in_len..(bi + 1) * in_len];
            let db = &dout[bi * out_len..(bi + 1) * out_len];
            if sh.is_pointwise() {
                gemm(kk, p, sh.filters, &wt, db, dxb);
            } else {
                dcol.fill(T::default());
                gemm(kk, p, sh.filters, &wt, db, &mut dcol);
                col2im_add(sh, &dcol, dxb);
            }
        }
    }
}

/// 2×2 max pooling; returns the pooled values and the flat input index of
/// each maximum (first occurrence in row-major order wins ties).
pub fn maxpool2_forward<T: Scalar>(
    dims: &[usize],
    x: &[T],
) -> Result<(Vec<T>, Vec<u32>, [usize; 4])> {
    let [b, c, h, w] = dims4(dims)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 needs even extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((out, arg, [b, c, ho, wo]))
}

pub fn maxpool2_backward<T: Scalar>(arg: &[u32], dout: &[T], dx: &mut [T]) {
    for (&i, &g) in arg.iter().zip(dout) {
        dx[i as usize] += g;
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Scalar>(dims: &[usize], x: &[T]) -> Result<(Vec<T>, [usize; 4])> {
    let [b, c, h, w] = dims4(dims)?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::default(); b * c * ho * wo];
    for plane in 0..b * c {
        for y in 0..ho {
            let src = &x[plane * h * w + (y / 2) * w..][..w];
            let dst = &mut out[plane * ho * wo + y * wo..][..wo];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    Ok((out, [b, c, ho, wo]))
}

pub fn upsample2_backward<T: Scalar>(dims: &[usize], dout: &[T], dx: &mut [T]) {
    let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let (ho, wo) = (2 * h, 2 * w);
    for plane in 0..b * c {
        for y in 0..ho {
            let src = &dout[plane * ho * wo + y * wo..][..wo];
            let dst = &mut dx[plane * h * w + (y / 2) * w..][..w];
            for (xo, &g) in src.iter().enumerate() {
                dst[xo / 2] += g;
            }
        }
    }
}

pub(crate) fn dims4(dims: &[usize]) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(dims)
        .map_err(|_| Error::Shape(format!("expected a [B, C, H, W] tensor, got {dims:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Direct summation, `b[f]` first then `(c, ky, kx)` order.
    fn reference_conv(sh: &ConvShape, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let (ho, wo) = sh.out_hw();
        let k = sh.kernel;
        let mut out = Vec::new();
        for bi in 0..sh.batch {
            for f in 0..sh.filters {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[f];
                        for c in 0..sh.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * sh.stride + ky) as isize - sh.pad as isize;
                                    let ix = (ox * sh.stride + kx) as isize - sh.pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= sh.height as isize
                                        || ix >= sh.width as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((bi * sh.in_channels + c) * sh.height + iy as usize)
                                        * sh.width
                                        + ix as usize;
                                    acc += w[((f * sh.in_channels + c) * k + ky) * k + kx] * x[xi];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation_bitwise() {
        let mut rng = SeededRng::new(5);
        for trial in 0..30 {
            let k = [1, 3, 5][trial % 3];
            let stride = 1 + trial % 2;
            let pad = trial % (k / 2 + 2);
            let (bsz, c, f) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(6));
            let (h, w) = (k + rng.below(8), k + rng.below(20));
            let x: Vec<f64> = (0..bsz * c * h * w).map(|_| rng.normal()).collect();
            let wt: Vec<f64> = (0..f * c * k * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
            let sh = ConvShape::new(&[bsz, c, h, w], &[f, c, k, k], &[f], stride, pad).unwrap();
            assert_eq!(
                conv2d_forward(&sh, &x, &wt, &b),
                reference_conv(&sh, &x, &wt, &b)
            );
        }
    }

    #[test]
    fn conv_examples() {
        let sh = ConvShape::new(&[1, 1, 5, 5], &[1, 1, 3, 3], &[1], 1, 1).unwrap();
        let out = conv2d_forward(&sh, &[1.0f64; 25], &[1.0; 9], &[0.0]);
        assert_eq!(out[12], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[2], 6.0);
        assert!(ConvShape::new(&[1, 2, 5, 5], &[1, 3, 3, 3], &[1], 1, 1).is_err());
        assert!(ConvShape::new(&[1, 2, 5, 5], &[1, 2, 2, 2], &[1], 1, 0).is_err());
    }

    #[test]
    fn pool_and_upsample() {
        let (v, arg, d) = maxpool2_forward(&[1, 1, 2, 2], &[1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((v, arg, d), (vec![4.0], vec![3], [1, 1, 1, 1]));
        assert!(maxpool2_forward(&[1, 1, 3, 2], &[0.0f64; 6]).is_err());
        let (u, d) = upsample2_forward(&[1, 1, 1, 1], &[7.0f64]).unwrap();
        assert_eq!((u, d), (vec![7.0; 4], [1, 1, 2, 2]));
        let mut dx = vec![0.0f64; 1];
        upsample2_backward(&[1, 1, 1, 1], &[1.0, 2.0, 3.0, 4.0], &mut dx);
        assert_eq!(dx, vec![10.0]);
    }
}
