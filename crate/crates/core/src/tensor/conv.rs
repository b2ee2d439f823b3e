//! 2-D cross-correlation (no kernel flip) with stride, dilation and zero
//! padding, lowered to GEMM through im2col.

use super::{gemm, MatRef, Real, TensorError};

/// Output extent along one axis; `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, dilation: usize, padding: usize) -> Option<usize> {
    let extent = (kernel - 1) * dilation + 1;
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || dilation == 0 || padded < extent {
        return None;
    }
    Some((padded - extent) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        let (&[n, c, h, w], &[f, kc, kh, kw]) = (input_shape, kernel_shape) else {
            return Err(TensorError::Shape(format!(
                "conv2d expects N×C×H×W input and F×C×kh×kw kernel, got {input_shape:?} and {kernel_shape:?}"
            )));
        };
        if c != kc {
            return Err(TensorError::Shape(format!(
                "conv2d input has {c} channels but kernel expects {kc}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(TensorError::Invalid("stride and dilation must be >= 1".into()));
        }
        let out_h = conv_output_size(h, kh, stride, dilation, padding);
        let out_w = conv_output_size(w, kw, stride, dilation, padding);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(TensorError::Shape(format!(
                "kernel {kh}×{kw} with dilation {dilation} does not fit {h}×{w} input with padding {padding}"
            )));
        };
        Ok(Self {
            batch: n,
            in_channels: c,
            out_channels: f,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            dilation,
            padding,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the input plane is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    fn in_plane(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    /// Output columns `ox` whose input column `ox*stride - padding + offset`
    /// falls inside `[0, width)`.
    fn valid_range(&self, offset: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let p = self.padding as isize;
        let s = self.stride as isize;
        let off = offset as isize;
        let lo = if p - off > 0 { (p - off + s - 1) / s } else { 0 };
        let hi_incl = (in_len as isize - 1 + p - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out_len as isize);
        let lo = lo.clamp(0, hi);
        (lo as usize, hi as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (h, w, oh, ow) = (self.height, self.width, self.out_h, self.out_w);
        let (s, d, p) = (self.stride, self.dilation, self.padding);
        let ncols = oh * ow;
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                let (oy_lo, oy_hi) = self.valid_range(ki * d, oh, h);
                for kj in 0..self.kernel_w {
                    let (ox_lo, ox_hi) = self.valid_range(kj * d, ow, w);
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    dst.fill(T::ZERO);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ki * d - p;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kj * d - p;
                            out[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                out[ox] = src[ox * s + kj * d - p];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (h, w, oh, ow) = (self.height, self.width, self.out_h, self.out_w);
        let (s, d, p) = (self.stride, self.dilation, self.padding);
        let ncols = oh * ow;
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..self.kernel_h {
                let (oy_lo, oy_hi) = self.valid_range(ki * d, oh, h);
                for kj in 0..self.kernel_w {
                    let (ox_lo, ox_hi) = self.valid_range(kj * d, ow, w);
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ki * d - p;
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            dst[ox * s + kj * d - p] += src[oy * ow + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub(crate) fn forward<T: Real>(&self, x: &[T], kernel: &[T], bias: Option<&[T]>, out: &mut [T]) {
        let k = MatRef::row_major(kernel, self.out_channels, self.col_rows());
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::ZERO; self.col_rows() * self.col_cols()]
        };
        for n in 0..self.batch {
            let xn = &x[n * self.in_plane()..(n + 1) * self.in_plane()];
            let yn = &mut out[n * self.out_plane()..(n + 1) * self.out_plane()];
            let b = if self.is_pointwise() {
                MatRef::row_major(xn, self.col_rows(), self.col_cols())
            } else {
                self.im2col(xn, &mut cols);
                MatRef::row_major(&cols, self.col_rows(), self.col_cols())
            };
            gemm(T::ONE, k, b, T::ZERO, yn);
            if let Some(bias) = bias {
                for (f, row) in yn.chunks_mut(self.col_cols()).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias[f]);
                }
            }
        }
    }

    /// Accumulates into whichever of `dx`, `dkernel`, `dbias` are present.
    pub(crate) fn backward<T: Real>(
        &self,
        x: &[T],
        kernel: &[T],
        dy: &[T],
        mut dx: Option<&mut [T]>,
        mut dkernel: Option<&mut [T]>,
        mut dbias: Option<&mut [T]>,
    ) {
        let k = MatRef::row_major(kernel, self.out_channels, self.col_rows());
        let (rows, ncols) = (self.col_rows(), self.col_cols());
        let mut cols = vec![T::ZERO; if self.is_pointwise() { 0 } else { rows * ncols }];
        let mut dcols = vec![
            T::ZERO;
            if dx.is_some() && !self.is_pointwise() {
                rows * ncols
            } else {
                0
            }
        ];
        for n in 0..self.batch {
            let dyn_ = &dy[n * self.out_plane()..(n + 1) * self.out_plane()];
            let g = MatRef::row_major(dyn_, self.out_channels, ncols);
            if let Some(db) = dbias.as_deref_mut() {
                for (f, row) in dyn_.chunks(ncols).enumerate() {
                    db[f] += row.iter().copied().sum::<T>();
                }
            }
            if let Some(dk) = dkernel.as_deref_mut() {
                let xn = &x[n * self.in_plane()..(n + 1) * self.in_plane()];
                let c = if self.is_pointwise() {
                    MatRef::row_major(xn, rows, ncols)
                } else {
                    self.im2col(xn, &mut cols);
                    MatRef::row_major(&cols, rows, ncols)
                };
                gemm(T::ONE, g, c.t(), T::ONE, dk);
            }
            if let Some(dxb) = dx.as_deref_mut() {
                let dxn = &mut dxb[n * self.in_plane()..(n + 1) * self.in_plane()];
                if self.is_pointwise() {
                    gemm(T::ONE, k.t(), g, T::ONE, dxn);
                } else {
                    gemm(T::ONE, k.t(), g, T::ZERO, &mut dcols);
                    self.col2im(&dcols, dxn);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Direct six-loop convolution.
    fn naive(x: &[f64], k: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_channels * g.out_h * g.out_w];
        for n in 0..g.batch {
            for f in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_channels {
                            for ki in 0..g.kernel_h {
                                for kj in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize;
                                    let ki_ = ((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                                    acc += x[xi] * k[ki_];
                                }
                            }
                        }
                        out[((n * g.out_channels + f) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn run(g: &ConvGeometry, x: &[f64], k: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.output_shape().iter().product()];
        g.forward(x, k, None, &mut out);
        out
    }

    #[test]
    fn ones_kernel_center_sums_nine() {
        let g = ConvGeometry::new(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 1, 1).unwrap();
        let out = run(&g, &[1.0; 9], &[1.0; 9]);
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        for dilation in [1, 2] {
            let g = ConvGeometry::new(&[2, 3, 7, 6], &[3, 3, 3, 3], 1, dilation, dilation).unwrap();
            let mut k = vec![0.0; 81];
            for c in 0..3 {
                k[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
            }
            assert_eq!(run(&g, &x, &k), x);
        }
    }

    #[test]
    fn dilation_two_taps_at_even_offsets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..81).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ConvGeometry::new(&[1, 1, 9, 9], &[1, 1, 3, 3], 1, 2, 2).unwrap();
        assert_eq!((g.out_h, g.out_w), (9, 9));
        let out = run(&g, &x, &[1.0; 9]);
        // interior point (4,4): taps at offsets {-2,0,2}²
        let mut expected = 0.0;
        for dy in [-2i32, 0, 2] {
            for dx in [-2i32, 0, 2] {
                expected += x[((4 + dy) * 9 + (4 + dx)) as usize];
            }
        }
        assert!((out[4 * 9 + 4] - expected).abs() < 1e-14);
        assert_eq!(out, naive(&x, &[1.0; 9], &g));
    }

    #[test]
    fn matches_naive_oracle_exactly_on_random_5x5() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let c = rng.random_range(1..4);
            let f = rng.random_range(1..4);
            let x: Vec<f64> = (0..2 * c * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..f * c * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = ConvGeometry::new(&[2, c, 5, 5], &[f, c, 3, 3], 1, 1, 1).unwrap();
            let ours = run(&g, &x, &k);
            let oracle = naive(&x, &k, &g);
            assert_eq!(ours, oracle, "trial {trial}");
        }
    }

    #[test]
    fn strided_and_padded_geometries_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for &(h, w, kh, s, d, p) in &[
            (8, 8, 1, 2, 1, 0),
            (7, 5, 3, 2, 1, 1),
            (9, 9, 3, 1, 2, 2),
            (6, 6, 3, 3, 2, 0),
            (4, 4, 1, 1, 1, 0),
        ] {
            let x: Vec<f64> = (0..2 * 2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..3 * 2 * kh * kh).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = ConvGeometry::new(&[2, 2, h, w], &[3, 2, kh, kh], s, d, p).unwrap();
            let ours = run(&g, &x, &k);
            let oracle = naive(&x, &k, &g);
            assert_eq!(ours, oracle);
        }
    }

    #[test]
    fn geometry_errors() {
        assert!(ConvGeometry::new(&[1, 2, 3, 3], &[1, 3, 3, 3], 1, 1, 1).is_err());
        assert!(ConvGeometry::new(&[1, 1, 3, 3], &[1, 1, 3, 3], 1, 2, 0).is_err());
        assert!(ConvGeometry::new(&[1, 1, 3], &[1, 1, 3, 3], 1, 1, 0).is_err());
        assert_eq!(conv_output_size(32, 3, 1, 2, 2), Some(32));
        assert_eq!(conv_output_size(32, 1, 2, 1, 0), Some(16));
    }
}
