//! Low-level numeric kernels: GEMM wrappers and the im2col / col2im pair that
//! lowers strided convolutions onto matrix products.

/// `c (m×n) = a (m×k) · b (k×n)`, or `c += ..` when `accumulate` is set.
///
/// Strides are in elements, which lets callers pass transposed views for free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (isize, isize),
    b: &[f32],
    b_strides: (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every index the strides can reach; callers
    // pass row-major buffers of exactly the advertised extents.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major strides of a `rows × cols` matrix.
pub(crate) fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// Strides that read a row-major `rows × cols` buffer as its transpose.
pub(crate) fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

/// Geometry of a "same"-padded strided convolution along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisGeometry {
    pub input: usize,
    pub output: usize,
    pub pad_before: usize,
}

impl AxisGeometry {
    /// Output is `ceil(input / stride)`; the total padding is split with the
    /// smaller half in front.
    pub fn same(input: usize, kernel: usize, stride: usize) -> Self {
        let output = input.div_ceil(stride);
        let needed = ((output - 1) * stride + kernel).saturating_sub(input);
        AxisGeometry {
            input,
            output,
            pad_before: needed / 2,
        }
    }
}

/// Full 2-D geometry of a convolution acting on NHWC tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub rows: AxisGeometry,
    pub cols: AxisGeometry,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn same(
        batch: usize,
        height: usize,
        width: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        ConvGeometry {
            batch,
            rows: AxisGeometry::same(height, kernel, stride),
            cols: AxisGeometry::same(width, kernel, stride),
            in_channels,
            kernel,
            stride,
        }
    }

    /// Number of output positions, i.e. rows of the column matrix.
    pub fn patches(&self) -> usize {
        self.batch * self.rows.output * self.cols.output
    }

    /// Length of one unrolled patch, i.e. columns of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.rows.input * self.cols.input * self.in_channels
    }

    /// Input coordinate for output `o` and kernel tap `t`, or `None` in padding.
    #[inline]
    fn source(axis: &AxisGeometry, stride: usize, o: usize, t: usize) -> Option<usize> {
        let pos = (o * stride + t) as isize - axis.pad_before as isize;
        if pos >= 0 && (pos as usize) < axis.input {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Unroll NHWC `input` into a `(patches × k·k·C)` matrix with column order
/// `(ky, kx, c)`, matching a `[k, k, C, F]` kernel read as `(k·k·C) × F`.
pub(crate) fn im2col(input: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let c = g.in_channels;
    let k = g.kernel;
    let plen = g.patch_len();
    let mut cols = vec![0.0f32; g.patches() * plen];
    let (h, w) = (g.rows.input, g.cols.input);
    let mut row = 0;
    for b in 0..g.batch {
        let image = &input[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..g.rows.output {
            for ox in 0..g.cols.output {
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for ky in 0..k {
                    let Some(iy) = ConvGeometry::source(&g.rows, g.stride, oy, ky) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = ConvGeometry::source(&g.cols, g.stride, ox, kx) else {
                            continue;
                        };
                        let s = (iy * w + ix) * c;
                        let d = (ky * k + kx) * c;
                        dst[d..d + c].copy_from_slice(&image[s..s + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto an NHWC buffer.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let c = g.in_channels;
    let k = g.kernel;
    let plen = g.patch_len();
    let (h, w) = (g.rows.input, g.cols.input);
    let mut out = vec![0.0f32; g.input_len()];
    let mut row = 0;
    for b in 0..g.batch {
        let image = &mut out[b * h * w * c..(b + 1) * h * w * c];
        for oy in 0..g.rows.output {
            for ox in 0..g.cols.output {
                let src = &cols[row * plen..(row + 1) * plen];
                for ky in 0..k {
                    let Some(iy) = ConvGeometry::source(&g.rows, g.stride, oy, ky) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = ConvGeometry::source(&g.cols, g.stride, ox, kx) else {
                            continue;
                        };
                        let d = (iy * w + ix) * c;
                        let s = (ky * k + kx) * c;
                        for (o, v) in image[d..d + c].iter_mut().zip(&src[s..s + c]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_halves_even_extents() {
        for n in [2usize, 4, 8, 16, 32, 64] {
            let a = AxisGeometry::same(n, 5, 2);
            assert_eq!(a.output, n / 2);
            assert_eq!(a.pad_before, 1);
        }
        let one = AxisGeometry::same(1, 5, 2);
        assert_eq!((one.output, one.pad_before), (1, 2));
    }

    #[test]
    fn gemm_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, rm(3), &b, rm(2), &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a^T (3x2) · a (2x3)... use transposed view of a as 3x2
        let mut d = [0.0; 9];
        gemm(3, 2, 3, &a, tr(3), &a, rm(3), &mut d, false);
        assert_eq!(d[0], 1.0 + 16.0);
        assert_eq!(d[4], 4.0 + 25.0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::same(2, 5, 6, 3, 5, 2);
        let x: Vec<f32> = (0..g.input_len()).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let y: Vec<f32> = (0..g.patches() * g.patch_len())
            .map(|i| ((i * 5) % 13) as f32 - 6.0)
            .collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| (a * b) as f64).sum();
        assert_eq!(lhs, rhs);
    }
}
