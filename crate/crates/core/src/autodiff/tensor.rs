use std::fmt;

use super::AutodiffError;

/// Storage scalar for [`Tensor2`].
///
/// Arithmetic is carried out in `f64` and narrowed on store, so `f32`
/// tensors get 64-bit accumulation in every reduction for free.
pub trait Scalar:
    Copy + PartialEq + PartialOrd + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn widen(self) -> f64;
    fn narrow(value: f64) -> Self;

    fn is_finite(self) -> bool {
        self.widen().is_finite()
    }
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor2<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2<T> {
    /// Builds a tensor, rejecting a wrong data length or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, AutodiffError> {
        if data.len() != rows * cols {
            return Err(AutodiffError::LengthMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        let tensor = Self { rows, cols, data };
        tensor.check_finite("new")?;
        Ok(tensor)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::narrow(1.0);
        }
        t
    }

    pub fn scalar(value: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
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

    /// Builds a tensor from nested rows. All rows must share a length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, AutodiffError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(AutodiffError::RaggedRows {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the raw storage. Callers own the finiteness
    /// invariant; graph ops re-check it on every output.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics; a zero-column tensor has no row data anyway.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// Copies the listed rows, in order, into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::narrow(x.widen())).collect(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| T::narrow(f(x.widen()))).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| T::narrow(f(a.widen(), b.widen())))
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Matrix product with 64-bit accumulation.
    pub fn matmul(&self, other: &Self) -> Result<Self, AutodiffError> {
        if self.cols != other.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Vec::with_capacity(m * n);
        let mut acc = vec![0.0f64; n];
        for i in 0..m {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for p in 0..k {
                let a = self.data[i * k + p].widen();
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (slot, &b) in acc.iter_mut().zip(brow) {
                    *slot += a * b.widen();
                }
            }
            out.extend(acc.iter().map(|&v| T::narrow(v)));
        }
        Ok(Self {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// Sum of all entries, accumulated in 64 bits.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.widen()).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x.widen() * x.widen()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.widen() - b.widen()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<(), AutodiffError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(index) => Err(AutodiffError::NonFinite { op, index }),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2[{}x{}]", self.rows, self.cols)?;
        let mut list = f.debug_list();
        for row in self.iter_rows() {
            list.entry(&row);
        }
        list.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let a = Tensor2::<f32>::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor2::<f32>::from_rows(&[[1.0], [1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_is_neutral() {
        let m = Tensor2::<f32>::from_rows(&[[0.5, -2.0], [7.0, 1.25]]).unwrap();
        assert_eq!(Tensor2::identity(2).matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&Tensor2::identity(2)).unwrap(), m);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor2::<f32>::zeros(2, 3);
        let err = a.matmul(&Tensor2::zeros(2, 3)).unwrap_err();
        match err {
            AutodiffError::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("2x3"));
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(
            Tensor2::<f32>::new(1, 2, vec![1.0, f32::NAN]),
            Err(AutodiffError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Tensor2::<f32>::new(2, 2, vec![1.0]),
            Err(AutodiffError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor2::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0]]),
            Err(AutodiffError::RaggedRows { .. })
        ));
    }

    #[test]
    fn zero_sized_rows_iterate_cleanly() {
        let t = Tensor2::<f32>::zeros(3, 0);
        assert_eq!(t.iter_rows().count(), 0);
        let t = Tensor2::<f32>::zeros(0, 4);
        assert_eq!(t.iter_rows().count(), 0);
    }
}
