//! im2col convolution kernels.
//!
//! A `[C, H, W]` input is unrolled into a `[C*k*k, Ho*Wo]` column matrix so
//! that convolution, its input gradient, and the relevance redistribution
//! all become plain matrix products.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Geometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Geometry> {
        if kernel == 0 || stride == 0 {
            return None;
        }
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        if ph < kernel || pw < kernel {
            return None;
        }
        Some(Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (ph - kernel) / stride + 1,
            out_width: (pw - kernel) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Source pixel for column-matrix entry (row, col), or `None` when the
    /// kernel tap lands in the zero padding.
    #[inline]
    fn source(&self, row: usize, col: usize) -> Option<usize> {
        let k2 = self.kernel * self.kernel;
        let c = row / k2;
        let ky = (row % k2) / self.kernel;
        let kx = row % self.kernel;
        let oy = col / self.out_width;
        let ox = col % self.out_width;
        let y = (oy * self.stride + ky) as isize - self.padding as isize;
        let x = (ox * self.stride + kx) as isize - self.padding as isize;
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some((c * self.height + y as usize) * self.width + x as usize)
        }
    }
}

pub(crate) fn im2col<T: Scalar>(g: &Geometry, input: &[T]) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (c, d) in dst.iter_mut().enumerate() {
            if let Some(s) = g.source(r, c) {
                *d = input[s];
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column entries back onto the input grid,
/// accumulating overlapping taps.
pub(crate) fn col2im<T: Scalar>(g: &Geometry, cols_data: &[T]) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = vec![T::zero(); g.channels * g.height * g.width];
    for r in 0..rows {
        let src = &cols_data[r * cols..(r + 1) * cols];
        for (c, &v) in src.iter().enumerate() {
            if let Some(s) = g.source(r, c) {
                out[s] = out[s] + v;
            }
        }
    }
    out
}

/// `a[m, k] @ b[k, n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a[k, m]^T @ b[k, n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a[m, n] @ b[k, n]^T`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = Geometry::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&g, &x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&g, &y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sqrt()).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        // a^T stored as 3x2
        let at: Vec<f64> = (0..6).map(|i| a[(i % 2) * 3 + i / 2]).collect();
        assert_eq!(matmul_tn(&at, &b, 3, 2, 4), ab);
        // b^T stored as 4x3
        let bt: Vec<f64> = (0..12).map(|i| b[(i % 3) * 4 + i / 3]).collect();
        let ab2 = matmul_nt(&a, &bt, 2, 3, 4);
        for (x, y) in ab.iter().zip(&ab2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
