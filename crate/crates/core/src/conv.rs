//! 2-D cross-correlation and its exact adjoint (transposed convolution).
//!
//! Both operate on batches `[n, c, h, w]`; the unbatched `[c, h, w]` form is
//! accepted and returned unbatched. Kernels follow the `[c_out, c_in, kh, kw]`
//! layout for `conv2d`; `conv_transpose2d` takes the kernel of the convolution
//! it is the adjoint of, i.e. `[c_in_of_transpose, c_out_of_transpose, kh, kw]`.

use crate::error::{shape_err, Result};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

/// Output extent of a convolution along one axis; errors unless integral and ≥ 1.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return shape_err("stride must be ≥ 1");
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return shape_err(format!(
            "kernel {kernel} larger than padded input {padded}"
        ));
    }
    if (padded - kernel) % stride != 0 {
        return shape_err(format!(
            "non-integral output extent: ({input} + 2·{padding} − {kernel}) / {stride}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Spatial extent produced by the transposed convolution of an `input`-wide map.
pub fn conv_transpose_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return shape_err("stride must be ≥ 1");
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return shape_err(format!(
            "transposed convolution of extent {input} collapses with padding {padding}"
        ));
    }
    Ok(full - 2 * padding)
}

/// Geometry of one convolution `c_in×h×w → c_out×oh×ow`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn for_conv(
        c_in: usize,
        h: usize,
        w: usize,
        kernel: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [c_out, kc, kh, kw] = kernel[..] else {
            return shape_err(format!("kernel must be 4-D, got {kernel:?}"));
        };
        if kc != c_in {
            return shape_err(format!("kernel expects {kc} input channels, input has {c_in}"));
        }
        let oh = conv_output_extent(h, kh, stride, padding)?;
        let ow = conv_output_extent(w, kw, stride, padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        })
    }

    /// Geometry of the convolution whose adjoint maps `c×ih×iw` through `kernel`.
    pub fn for_transpose(
        c: usize,
        ih: usize,
        iw: usize,
        kernel: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let [kc, c_out_t, kh, kw] = kernel[..] else {
            return shape_err(format!("kernel must be 4-D, got {kernel:?}"));
        };
        if kc != c {
            return shape_err(format!("kernel expects {kc} input channels, input has {c}"));
        }
        let h = conv_transpose_output_extent(ih, kh, stride, padding)?;
        let w = conv_transpose_output_extent(iw, kw, stride, padding)?;
        let g = Self::for_conv(c_out_t, h, w, &[kc, c_out_t, kh, kw], stride, padding)?;
        debug_assert_eq!((g.oh, g.ow), (ih, iw));
        Ok(g)
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    pub fn input_size(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn output_size(&self) -> usize {
        self.c_out * self.oh * self.ow
    }

    /// Unfolds one `c_in×h×w` sample into columns `offset..offset + oh·ow` of a
    /// `[c_in·kh·kw, ld]` matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64], ld: usize, offset: usize) {
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ld + offset..][..self.out_len()];
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        if ii < 0 || ii >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &x[(c * self.h + ii as usize) * self.w..][..self.w];
                        let (lo, hi) = self.valid_columns(kj);
                        if lo >= hi {
                            line.fill(0.0);
                            continue;
                        }
                        line[..lo].fill(0.0);
                        line[hi..].fill(0.0);
                        let first = lo * self.stride + kj - self.padding;
                        for (v, s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(self.stride)) {
                            *v = *s;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: scatters the same block of columns back, accumulating into `x`.
    fn col2im_add(&self, cols: &[f64], ld: usize, offset: usize, x: &mut [f64]) {
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ld + offset..][..self.out_len()];
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut x[(c * self.h + ii as usize) * self.w..][..self.w];
                        let (lo, hi) = self.valid_columns(kj);
                        if lo >= hi {
                            continue;
                        }
                        let first = lo * self.stride + kj - self.padding;
                        let line = &src[oi * self.ow + lo..oi * self.ow + hi];
                        for (d, v) in dst[first..].iter_mut().step_by(self.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose input column `oj·stride + kj − padding` lies inside the map.
    fn valid_columns(&self, kj: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.padding > kj {
            ((self.w + self.padding - kj - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn kernel_mat<'a>(&self, kernel: &'a [f64]) -> MatRef<'a> {
        MatRef::new(kernel, self.c_out, self.patch_len())
    }

    /// Columns of all `n` samples side by side: `[c_in·kh·kw, n·oh·ow]`.
    fn unfold_batch(&self, n: usize, x: &[f64]) -> Vec<f64> {
        let ld = n * self.out_len();
        let mut cols = vec![0.0; self.patch_len() * ld];
        for s in 0..n {
            let xs = &x[s * self.input_size()..][..self.input_size()];
            self.im2col(xs, &mut cols, ld, s * self.out_len());
        }
        cols
    }

    /// Per-sample `[c_out, oh·ow]` blocks regrouped as one `[c_out, n·oh·ow]` matrix.
    fn gather_channels(&self, n: usize, y: &[f64]) -> Vec<f64> {
        let ol = self.out_len();
        let mut out = vec![0.0; self.c_out * n * ol];
        for s in 0..n {
            for c in 0..self.c_out {
                out[(c * n + s) * ol..][..ol].copy_from_slice(&y[(s * self.c_out + c) * ol..][..ol]);
            }
        }
        out
    }

    /// Forward convolution of `n` samples.
    pub fn conv_forward(&self, n: usize, x: &[f64], kernel: &[f64], out: &mut [f64]) {
        let ol = self.out_len();
        let ld = n * ol;
        let cols = self.unfold_batch(n, x);
        let mut wide = vec![0.0; self.c_out * ld];
        gemm(
            1.0,
            self.kernel_mat(kernel),
            MatRef::new(&cols, self.patch_len(), ld),
            0.0,
            &mut wide,
        );
        for s in 0..n {
            for c in 0..self.c_out {
                out[(s * self.c_out + c) * ol..][..ol].copy_from_slice(&wide[(c * n + s) * ol..][..ol]);
            }
        }
    }

    /// Adjoint of `conv_forward` with respect to its input: `y` has conv-output shape.
    pub fn conv_adjoint(&self, n: usize, y: &[f64], kernel: &[f64], x_out: &mut [f64]) {
        let ld = n * self.out_len();
        let wide = self.gather_channels(n, y);
        let mut cols = vec![0.0; self.patch_len() * ld];
        gemm(
            1.0,
            self.kernel_mat(kernel).t(),
            MatRef::new(&wide, self.c_out, ld),
            0.0,
            &mut cols,
        );
        for s in 0..n {
            let xs = &mut x_out[s * self.input_size()..][..self.input_size()];
            self.col2im_add(&cols, ld, s * self.out_len(), xs);
        }
    }

    /// Accumulates `∂⟨g, conv(x, K)⟩/∂K` into `kernel_grad`, `g` shaped like the conv output.
    pub fn kernel_grad_add(&self, n: usize, x: &[f64], g: &[f64], kernel_grad: &mut [f64]) {
        let ld = n * self.out_len();
        let cols = self.unfold_batch(n, x);
        let wide = self.gather_channels(n, g);
        gemm(
            1.0,
            MatRef::new(&wide, self.c_out, ld),
            MatRef::new(&cols, self.patch_len(), ld).t(),
            1.0,
            kernel_grad,
        );
    }
}

/// Splits `[n,c,h,w]` or `[c,h,w]` into `(n, c, h, w, batched)`.
pub(crate) fn batch_dims(t: &Tensor) -> Result<(usize, usize, usize, usize, bool)> {
    match *t.dims() {
        [n, c, h, w] => Ok((n, c, h, w, true)),
        [c, h, w] => Ok((1, c, h, w, false)),
        _ => shape_err(format!("expected [n,c,h,w] or [c,h,w], got {:?}", t.dims())),
    }
}

fn with_batch(n: usize, inner: [usize; 3], batched: bool) -> Vec<usize> {
    if batched {
        vec![n, inner[0], inner[1], inner[2]]
    } else {
        inner.to_vec()
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, c, h, w, batched) = batch_dims(input)?;
    let g = ConvGeometry::for_conv(c, h, w, kernel.dims(), stride, padding)?;
    let mut out = vec![0.0; n * g.output_size()];
    g.conv_forward(n, input.data(), kernel.data(), &mut out);
    Tensor::new(&with_batch(n, [g.c_out, g.oh, g.ow], batched), out)
}

/// Transposed convolution, the exact adjoint of [`conv2d`] with the same kernel.
pub fn conv_transpose2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w, batched) = batch_dims(input)?;
    let g = ConvGeometry::for_transpose(c, h, w, kernel.dims(), stride, padding)?;
    let mut out = vec![0.0; n * g.input_size()];
    g.conv_adjoint(n, input.data(), kernel.data(), &mut out);
    Tensor::new(&with_batch(n, [g.c_in, g.h, g.w], batched), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp4() -> Tensor {
        Tensor::from_fn(&[1, 4, 4], |i| i as f64)
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[2, 3, 5], |i| (i as f64).sin());
        let mut k = Tensor::zeros(&[2, 2, 1, 1]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn averaging_kernel_on_constant() {
        let x = Tensor::full(&[1, 6, 6], 2.5);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 4, 4]);
        assert!(y.data().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn diagonal_kernel_on_ramp() {
        let x = ramp4();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[8] = 1.0;
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        let at = |i: usize, j: usize| (i * 4 + j) as f64;
        for i in 0..2 {
            for j in 0..2 {
                let want = at(i + 1, j + 1) + at(i + 2, j + 2);
                assert_eq!(y.data()[i * 2 + j], want);
            }
        }
    }

    #[test]
    fn non_integral_extent_is_shape_error() {
        let x = Tensor::zeros(&[1, 64, 64]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &k, 2, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 4, 4]), 2, 1).is_ok());
    }

    #[test]
    fn transpose_inverts_extents() {
        let k = Tensor::zeros(&[3, 2, 4, 4]);
        let x = Tensor::zeros(&[5, 2, 40, 40]);
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.dims(), &[5, 3, 20, 20]);
        let back = conv_transpose2d(&y, &k, 2, 1).unwrap();
        assert_eq!(back.dims(), x.dims());
    }

    #[test]
    fn transpose_is_adjoint() {
        // <conv(x), y> == <x, conv_transpose(y)>
        let x = Tensor::from_fn(&[2, 3, 7, 7], |i| ((i * 37 % 11) as f64) - 5.0);
        let k = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 7) as f64) * 0.1 - 0.3);
        let cx = conv2d(&x, &k, 2, 1).unwrap();
        let y = Tensor::from_fn(cx.dims(), |i| ((i * 17 % 5) as f64) - 2.0);
        let lhs = cx.dot(&y).unwrap();
        let ty = conv_transpose2d(&y, &k, 2, 1).unwrap();
        let rhs = x.dot(&ty).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
