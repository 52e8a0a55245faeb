use crate::codec::{Decode, Decoder, Encode, Encoder};
use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixF64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixF64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "MatrixF64::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice yields a `0 x cols` matrix with
    /// `cols = 0`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("MatrixF64::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single column built from `values`.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &MatrixF64) -> Result<MatrixF64> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("rhs with {} rows", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(
            (self.rows, self.cols, other.cols),
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
        ))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &MatrixF64) -> Result<MatrixF64> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_t",
                format!("rhs with {} cols", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(
            (self.rows, self.cols, other.rows),
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
        ))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &MatrixF64) -> Result<MatrixF64> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "t_matmul",
                format!("rhs with {} rows", self.rows),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(
            (self.cols, self.rows, other.cols),
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
        ))
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(&mut self, row: &MatrixF64) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(
                "add_row",
                format!("1x{}", self.cols),
                format!("{}x{}", row.rows, row.cols),
            ));
        }
        for r in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in r.iter_mut().zip(&row.data) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn column_sums(&self) -> MatrixF64 {
        let mut out = MatrixF64::zeros(1, self.cols);
        for r in self.data.chunks_exact(self.cols.max(1)) {
            for (o, x) in out.data.iter_mut().zip(r) {
                *o += x;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> MatrixF64 {
        MatrixF64 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &MatrixF64, f: impl Fn(f64, f64) -> f64) -> Result<MatrixF64> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "zip_map",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(MatrixF64 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &MatrixF64, s: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add_scaled",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn hcat(a: &MatrixF64, b: &MatrixF64) -> Result<MatrixF64> {
        if a.rows != b.rows {
            return Err(Error::shape("hcat", a.rows, b.rows));
        }
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for r in 0..a.rows {
            data.extend_from_slice(a.row(r));
            data.extend_from_slice(b.row(r));
        }
        Ok(MatrixF64 {
            rows: a.rows,
            cols,
            data,
        })
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> MatrixF64 {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        MatrixF64 {
            rows: self.rows,
            cols,
            data,
        }
    }
}

fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], isize, isize),
    (b, rsb, csb): (&[f64], isize, isize),
) -> MatrixF64 {
    let mut out = MatrixF64::zeros(m, n);
    if m == 0 || n == 0 {
        return out;
    }
    // SAFETY: callers validated the shapes; the strides address exactly the `m x k` and
    // `k x n` operands inside `a` and `b`, and `out` is a fresh contiguous `m x n` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

impl Encode for MatrixF64 {
    fn encode(&self, enc: &mut Encoder) {
        enc.usize(self.rows);
        enc.usize(self.cols);
        enc.f64s(&self.data);
    }
}

impl Decode for MatrixF64 {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self> {
        let rows = dec.usize()?;
        let cols = dec.usize()?;
        let data = dec.f64s()?;
        MatrixF64::from_vec(rows, cols, data).map_err(|e| Error::Decode(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &MatrixF64, b: &MatrixF64) -> MatrixF64 {
        let mut out = MatrixF64::zeros(a.rows(), b.cols());
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

    fn transpose(a: &MatrixF64) -> MatrixF64 {
        let mut t = MatrixF64::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    fn seq(rows: usize, cols: usize, offset: f64) -> MatrixF64 {
        let data = (0..rows * cols).map(|i| (i as f64 * 0.37 + offset).sin()).collect();
        MatrixF64::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn products_match_the_triple_loop() {
        let a = seq(5, 3, 0.1);
        let b = seq(3, 4, 0.7);
        let c = seq(4, 3, 1.3);
        let d = seq(5, 4, 2.1);
        let close = |x: &MatrixF64, y: &MatrixF64| {
            x.shape() == y.shape()
                && x.as_slice().iter().zip(y.as_slice()).all(|(p, q)| (p - q).abs() < 1e-14)
        };
        assert!(close(&a.matmul(&b).unwrap(), &naive(&a, &b)));
        assert!(close(&a.matmul_t(&c).unwrap(), &naive(&a, &transpose(&c))));
        assert!(close(&a.t_matmul(&d).unwrap(), &naive(&transpose(&a), &d)));
    }

    #[test]
    fn shape_errors_are_reported() {
        let a = MatrixF64::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Shape { .. })));
        assert!(MatrixF64::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(MatrixF64::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn hcat_and_columns_are_inverse() {
        let a = seq(3, 2, 0.0);
        let b = seq(3, 4, 1.0);
        let ab = MatrixF64::hcat(&a, &b).unwrap();
        assert_eq!(ab.columns(0, 2), a);
        assert_eq!(ab.columns(2, 6), b);
    }
}
