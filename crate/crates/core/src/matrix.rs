//! Dense row-major matrices over a [`Scalar`] type.
//!
//! Everything in the optimizer works on 2-D arrays (vector parameters are
//! carried as n×1 matrices). The multiply routine dispatches through the
//! scalar's `gemm` hook so the `f64` path can use the AVX-512 kernel; all
//! paths accumulate each output element in ascending-k order, keeping
//! results bit-reproducible for a given build on a given machine.

use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dimension or shape failure in a matrix operation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("matrix of {rows}x{cols} needs {} elements, got {len}", rows * cols)]
    BadLength { rows: usize, cols: usize, len: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::BadLength { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested row slices; all rows must have equal length.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self, MatrixError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(MatrixError::BadLength { rows: r, cols: c, len: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Square matrix with the given diagonal, zeros elsewhere.
    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// i.i.d. standard-normal entries drawn in row-major order.
    pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| T::standard_normal(rng)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Frobenius norm, accumulated in index order.
    pub fn frobenius_norm(&self) -> T {
        let mut s = T::zero();
        for &x in &self.data {
            s += x * x;
        }
        s.sqrt()
    }

    /// Frobenius inner product ⟨self, other⟩, accumulated in index order.
    pub fn frobenius_dot(&self, other: &Self) -> Result<T, MatrixError> {
        self.check_same_shape("frobenius_dot", other)?;
        let mut s = T::zero();
        for (&x, &y) in self.data.iter().zip(&other.data) {
            s += x * y;
        }
        Ok(s)
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for &x in &self.data {
            if x.abs() > m {
                m = x.abs();
            }
        }
        m
    }

    fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<(), MatrixError> {
        if !self.same_shape(other) {
            return Err(MatrixError::DimMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, MatrixError> {
        self.check_same_shape("add", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| x + y).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, MatrixError> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| x - y).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: T) -> Self {
        let data = self.data.iter().map(|&x| x * s).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale_in_place(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// self += s · other, elementwise in index order.
    pub fn add_scaled_in_place(&mut self, s: T, other: &Self) -> Result<(), MatrixError> {
        self.check_same_shape("add_scaled_in_place", other)?;
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += s * y;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// self · other.
    pub fn matmul(&self, other: &Self) -> Result<Self, MatrixError> {
        if self.cols != other.rows {
            return Err(MatrixError::DimMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        T::gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            &other.data,
            false,
            false,
            &mut out.data,
        );
        Ok(out)
    }

    /// self · otherᵀ without materializing the transpose.
    pub fn matmul_transposed(&self, other: &Self) -> Result<Self, MatrixError> {
        if self.cols != other.cols {
            return Err(MatrixError::DimMismatch {
                op: "matmul_transposed",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        T::gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            &other.data,
            true,
            false,
            &mut out.data,
        );
        Ok(out)
    }

    /// Gram matrix self · selfᵀ (rows×rows, symmetric). Implementations may
    /// compute one triangle and mirror it; the mirrored entries are
    /// bit-identical to direct computation because each (i,j)/(j,i) pair
    /// sums the same products in the same order.
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.rows);
        T::gemm(self.rows, self.cols, self.rows, &self.data, &self.data, true, true, &mut out.data);
        out
    }
}

/// Reference multiply used by the scalar `gemm` hook's default body and the
/// `f64` fallback when AVX-512 is unavailable or the problem is small.
///
/// `b_transposed` reads the logical B[k][j] from `b[j*kdim + k]`;
/// `symmetric_out` (square, symmetric product) computes the upper triangle
/// and mirrors it. Per-element accumulation is ascending in k everywhere.
pub(crate) fn portable_gemm<T: Scalar>(
    m: usize,
    kdim: usize,
    n: usize,
    a: &[T],
    b: &[T],
    b_transposed: bool,
    symmetric_out: bool,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * kdim);
    debug_assert_eq!(b.len(), kdim * n);
    debug_assert_eq!(c.len(), m * n);
    if symmetric_out {
        debug_assert_eq!(m, n);
    }
    c.fill(T::zero());
    if b_transposed {
        // Rows of both operands are contiguous: plain dot products.
        for i in 0..m {
            let ar = &a[i * kdim..(i + 1) * kdim];
            let j0 = if symmetric_out { i } else { 0 };
            for j in j0..n {
                let br = &b[j * kdim..(j + 1) * kdim];
                let mut s = T::zero();
                for k in 0..kdim {
                    s += ar[k] * br[k];
                }
                c[i * n + j] = s;
            }
        }
    } else {
        // i-k-j order: the j loop is a contiguous axpy and k ascends per element.
        const KB: usize = 256;
        let mut kb = 0;
        while kb < kdim {
            let ke = (kb + KB).min(kdim);
            for i in 0..m {
                for k in kb..ke {
                    let aik = a[i * kdim + k];
                    let br = &b[k * n..(k + 1) * n];
                    let cr = &mut c[i * n..(i + 1) * n];
                    for j in 0..n {
                        cr[j] += aik * br[j];
                    }
                }
            }
            kb = ke;
        }
        debug_assert!(!symmetric_out, "symmetric_out requires b_transposed (gram form)");
    }
    if symmetric_out {
        for i in 1..m {
            for j in 0..i {
                c[i * n + j] = c[j * n + i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: textbook triple loop, ascending k.
    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        assert_eq!(a.cols(), b.rows());
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn max_rel_diff(x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
        let scale = x.frobenius_norm().max(1e-300);
        x.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&a, &b)| (a - b).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_matches_naive_oracle_over_shape_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Shapes straddle the SIMD dispatch threshold and all tile edges.
        let shapes = [
            (1, 1, 1),
            (5, 7, 3),
            (17, 33, 9),
            (8, 24, 320),
            (64, 64, 64),
            (65, 129, 70),
            (100, 50, 70),
            (130, 65, 127),
            (257, 129, 63),
        ];
        for &(m, k, n) in &shapes {
            let a = Matrix::<f64>::standard_normal(m, k, &mut rng);
            let b = Matrix::<f64>::standard_normal(k, n, &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(&a, &b);
            assert!(
                max_rel_diff(&got, &want) < 1e-12,
                "matmul deviates from oracle at shape ({m},{k},{n})"
            );
            let bt = b.transpose();
            let got_t = a.matmul_transposed(&bt).unwrap();
            assert!(
                max_rel_diff(&got_t, &want) < 1e-12,
                "matmul_transposed deviates from oracle at shape ({m},{k},{n})"
            );
        }
    }

    #[test]
    fn gram_is_exactly_symmetric_and_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &(m, k) in &[(3, 5), (24, 24), (65, 130), (129, 64)] {
            let x = Matrix::<f64>::standard_normal(m, k, &mut rng);
            let g = x.gram();
            let want = naive_matmul(&x, &x.transpose());
            assert!(max_rel_diff(&g, &want) < 1e-12, "gram deviates at ({m},{k})");
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn matmul_is_deterministic_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = Matrix::<f64>::standard_normal(130, 70, &mut rng);
        let b = Matrix::<f64>::standard_normal(70, 90, &mut rng);
        let c1 = a.matmul(&b).unwrap();
        let c2 = a.matmul(&b).unwrap();
        for (x, y) in c1.as_slice().iter().zip(c2.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(MatrixError::DimMismatch { op: "matmul", .. })));
        assert!(Matrix::<f64>::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn frobenius_norm_of_known_matrix() {
        let m = Matrix::<f64>::from_vec(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn f32_smoke_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = Matrix::<f32>::standard_normal(9, 17, &mut rng);
        let b = Matrix::<f32>::standard_normal(17, 5, &mut rng);
        let c = a.matmul(&b).unwrap();
        // Spot-check one element against a manual dot product.
        let mut s = 0.0f32;
        for k in 0..17 {
            s += a.get(4, k) * b.get(k, 3);
        }
        assert!((c.get(4, 3) - s).abs() <= 1e-4 * s.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// (A·B)·C ≈ A·(B·C) within 1e-10 relative error.
        #[test]
        fn matmul_associativity(seed in 0u64..1_000_000, m in 1usize..12, k in 1usize..12,
                                n in 1usize..12, p in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::<f64>::standard_normal(m, k, &mut rng);
            let b = Matrix::<f64>::standard_normal(k, n, &mut rng);
            let c = Matrix::<f64>::standard_normal(n, p, &mut rng);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let denom = left.frobenius_norm().to_f64().max(1.0);
            let diff = left.sub(&right).unwrap().frobenius_norm().to_f64();
            prop_assert!(diff / denom < 1e-10);
        }

        /// ‖sA‖_F = |s|·‖A‖_F within 1e-12 relative error.
        #[test]
        fn frobenius_norm_scales_linearly(seed in 0u64..1_000_000, m in 1usize..16,
                                          n in 1usize..16, s in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::<f64>::standard_normal(m, n, &mut rng);
            let lhs = a.scale(s).frobenius_norm();
            let rhs = s.abs() * a.frobenius_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-30));
        }

        /// Transpose is an involution and matmul agrees with the oracle.
        #[test]
        fn transpose_involution(seed in 0u64..1_000_000, m in 1usize..20, n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::<f64>::standard_normal(m, n, &mut rng);
            prop_assert_eq!(a.transpose().transpose(), a);
        }
    }
}
