//! Raw numeric kernels shared by the taped operations: matrix products and
//! the patch gather/scatter used to lower convolutions onto them.

/// `C = alpha * op(A) * op(B) + beta * C` for row-major storage.
///
/// `op(A)` is `m x k`; when `a_t` is set, `a` holds the `k x m` matrix `A`
/// and its transpose is used. Same for `b` with `op(B)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D correlation window sliding over an image of
/// `height x width`, producing `out_h x out_w` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PatchGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchGeometry {
    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn cols(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Source pixel for output position `o` and kernel tap `k` along one axis.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Gathers every patch of an NCHW image into a `[N*out_h*out_w, C*kh*kw]`
/// matrix. Out-of-image taps read as zero.
pub(crate) fn im2col(image: &[f64], g: &PatchGeometry) -> Vec<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    let plane = g.height * g.width;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((n * g.out_h + oy) * g.out_w + ox) * cols;
                for c in 0..g.channels {
                    let base = (n * g.channels + c) * plane;
                    for ky in 0..g.kh {
                        let Some(iy) = g.source(oy, ky, g.height) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            if let Some(ix) = g.source(ox, kx, g.width) {
                                out[row + (c * g.kh + ky) * g.kw + kx] =
                                    image[base + iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds patch rows back onto an NCHW image.
pub(crate) fn col2im(cols_data: &[f64], g: &PatchGeometry, image: &mut [f64]) {
    let cols = g.cols();
    let plane = g.height * g.width;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = ((n * g.out_h + oy) * g.out_w + ox) * cols;
                for c in 0..g.channels {
                    let base = (n * g.channels + c) * plane;
                    for ky in 0..g.kh {
                        let Some(iy) = g.source(oy, ky, g.height) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            if let Some(ix) = g.source(ox, kx, g.width) {
                                image[base + iy * g.width + ix] +=
                                    cols_data[row + (c * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` to `[N*P, C]`.
pub(crate) fn nchw_to_rows(x: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * p..(b * c + ch + 1) * p];
            for (i, v) in src.iter().enumerate() {
                out[(b * p + i) * c + ch] = *v;
            }
        }
    }
    out
}

/// `[N*P, C]` to `[N, C, P]`.
pub(crate) fn rows_to_nchw(rows: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows.len()];
    for b in 0..n {
        for i in 0..p {
            let src = &rows[(b * p + i) * c..(b * p + i + 1) * c];
            for (ch, v) in src.iter().enumerate() {
                out[(b * c + ch) * p + i] = *v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_transpose_flags() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.3).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, fa) in [(&a, false), (&at, true)] {
            for (bb, fb) in [(&b, false), (&bt, true)] {
                let mut c = vec![7.0; m * n];
                gemm(m, k, n, 1.0, aa, fa, bb, fb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = PatchGeometry {
            batch: 2,
            channels: 2,
            height: 5,
            width: 4,
            kh: 3,
            kw: 2,
            stride: 2,
            pad: 1,
            out_h: 3,
            out_w: 3,
        };
        let img: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let cols: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.4).cos()).collect();
        let lhs: f64 = im2col(&img, &g).iter().zip(&cols).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; img.len()];
        col2im(&cols, &g, &mut back);
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn row_permutations_invert() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(f64::from).collect();
        let rows = nchw_to_rows(&x, 2, 3, 4);
        assert_eq!(rows[1], x[4]);
        assert_eq!(rows_to_nchw(&rows, 2, 3, 4), x);
    }
}
