//! Thin bounds-checked wrapper over `matrixmultiply::dgemm`.

/// Strided read-only view of a matrix stored inside a flat slice.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatView<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatView {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c = alpha * a @ b + beta * c`, where `c` is row-major with `row_stride`.
pub(crate) fn gemm(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut [f64], c_row_stride: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm: rhs view out of bounds");
    assert!((m - 1) * c_row_stride + n - 1 < c.len(), "gemm: output out of bounds");
    // SAFETY: every strided access of a, b and c was bounds-checked above,
    // and c does not alias a or b because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            c_row_stride as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(1.0, MatView::row_major(&a, 2, 2), MatView::row_major(&b, 2, 2), 0.0, &mut c, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        let mut ct = [0.0; 4];
        gemm(1.0, MatView::row_major(&a, 2, 2).t(), MatView::row_major(&b, 2, 2), 0.0, &mut ct, 2);
        assert_eq!(ct, [26.0, 30.0, 38.0, 44.0]);
    }
}
