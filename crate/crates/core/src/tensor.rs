//! Dense real and complex matrices.
//!
//! Everything is row-major `f64`. Complex matrices keep real and imaginary
//! parts in separate planes so kernels can stream each plane on its own.

use std::ops::{Add, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A single complex number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComplexScalar {
    pub re: f64,
    pub im: f64,
}

impl ComplexScalar {
    pub const ZERO: ComplexScalar = ComplexScalar { re: 0.0, im: 0.0 };
    pub const ONE: ComplexScalar = ComplexScalar { re: 1.0, im: 0.0 };
    pub const I: ComplexScalar = ComplexScalar { re: 0.0, im: 1.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for ComplexScalar {
    type Output = ComplexScalar;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for ComplexScalar {
    type Output = ComplexScalar;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
}

/// Complex product with four real multiplications.
pub fn cmul_naive(a: ComplexScalar, b: ComplexScalar) -> ComplexScalar {
    let (re, im) = cmul_naive_with((a.re, a.im), (b.re, b.im));
    ComplexScalar::new(re, im)
}

/// Complex product with three real multiplications and five additions.
pub fn cmul_gauss(a: ComplexScalar, b: ComplexScalar) -> ComplexScalar {
    let (re, im) = cmul_gauss_with((a.re, a.im), (b.re, b.im));
    ComplexScalar::new(re, im)
}

#[inline(always)]
pub fn cmul_naive_with<S: Scalar>(a: (S, S), b: (S, S)) -> (S, S) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

#[inline(always)]
pub fn cmul_gauss_with<S: Scalar>(a: (S, S), b: (S, S)) -> (S, S) {
    let t1 = a.0 * b.0;
    let t2 = a.1 * b.1;
    let t3 = (a.0 + a.1) * (b.0 + b.1);
    (t1 - t2, t3 - t1 - t2)
}

/// Complex multiplication algorithm used by [`ComplexMatrix::matmul`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MulAlgo {
    #[default]
    Naive,
    Gauss,
}

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Widens a 32-bit storage view.
    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec: matrix has {} cols, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let orow = &mut out[i * other.cols..(i + 1) * other.cols];
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[l * other.cols..(l + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(RealMatrix {
            rows: self.rows,
            cols: other.cols,
            data: out,
        })
    }

    pub fn add(&self, other: &RealMatrix) -> Result<RealMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealMatrix) -> Result<RealMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &RealMatrix, f: impl Fn(f64, f64) -> f64) -> Result<RealMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Dense row-major complex matrix with planar (split) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} complex matrix needs {} values per plane, got re={} im={}",
                rows * cols,
                re.len(),
                im.len()
            )));
        }
        check_finite(&re)?;
        check_finite(&im)?;
        Ok(Self { rows, cols, re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| {
            if r == c {
                ComplexScalar::ONE
            } else {
                ComplexScalar::ZERO
            }
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> ComplexScalar,
    ) -> Self {
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let z = f(r, c);
                re.push(z.re);
                im.push(z.im);
            }
        }
        Self { rows, cols, re, im }
    }

    /// Builds a matrix from a list of entries in row-major order.
    pub fn from_entries(rows: usize, cols: usize, entries: &[ComplexScalar]) -> Result<Self> {
        Self::new(
            rows,
            cols,
            entries.iter().map(|z| z.re).collect(),
            entries.iter().map(|z| z.im).collect(),
        )
    }

    /// A column vector (`len × 1`).
    pub fn column(entries: &[ComplexScalar]) -> Result<Self> {
        Self::from_entries(entries.len(), 1, entries)
    }

    pub fn from_real_planes(re: &RealMatrix, im: &RealMatrix) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::DimensionMismatch(format!(
                "re plane {:?} vs im plane {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self {
            rows: re.rows(),
            cols: re.cols(),
            re: re.data().to_vec(),
            im: im.data().to_vec(),
        })
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
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn re_plane(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.re.clone(),
        }
    }

    pub fn im_plane(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.im.clone(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> ComplexScalar {
        let i = r * self.cols + c;
        ComplexScalar::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, r: usize, c: usize, z: ComplexScalar) {
        let i = r * self.cols + c;
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    /// Entry at flat row-major index `i`.
    pub fn at(&self, i: usize) -> ComplexScalar {
        ComplexScalar::new(self.re[i], self.im[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = ComplexScalar> + '_ {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| ComplexScalar::new(re, im))
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    /// Multiplies every entry by the complex scalar `z`.
    pub fn scale(&self, z: ComplexScalar) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| cmul_naive(self.get(r, c), z))
    }

    pub fn add(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_planes(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_planes(other, |a, b| a - b)
    }

    fn zip_planes(&self, other: &ComplexMatrix, f: impl Fn(f64, f64) -> f64) -> Result<ComplexMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().zip(&other.re).map(|(&a, &b)| f(a, b)).collect(),
            im: self.im.iter().zip(&other.im).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> ComplexMatrix {
        let (a, b) = (start * self.cols, end * self.cols);
        ComplexMatrix {
            rows: end - start,
            cols: self.cols,
            re: self.re[a..b].to_vec(),
            im: self.im[a..b].to_vec(),
        }
    }

    /// Column `c` as a pair of planes.
    pub fn column_planes(&self, c: usize) -> (Vec<f64>, Vec<f64>) {
        (
            (0..self.rows).map(|r| self.re[r * self.cols + c]).collect(),
            (0..self.rows).map(|r| self.im[r * self.cols + c]).collect(),
        )
    }

    /// Stacks columns given as plane pairs into a `rows × cols.len()` matrix.
    pub fn from_columns(columns: &[(Vec<f64>, Vec<f64>)]) -> Result<ComplexMatrix> {
        let rows = columns.first().map_or(0, |c| c.0.len());
        if columns.iter().any(|(re, im)| re.len() != rows || im.len() != rows) {
            return Err(Error::DimensionMismatch("ragged columns".into()));
        }
        let cols = columns.len();
        let mut out = ComplexMatrix::zeros(rows, cols);
        for (c, (re, im)) in columns.iter().enumerate() {
            for r in 0..rows {
                out.re[r * cols + c] = re[r];
                out.im[r * cols + c] = im[r];
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &ComplexMatrix, algo: MulAlgo) -> Result<ComplexMatrix> {
        matmul_complex(self, other, algo)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.entries()
            .zip(other.entries())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().map(ComplexScalar::abs).fold(0.0, f64::max)
    }
}

/// Complex matrix product `a · b`.
pub fn matmul_complex(a: &ComplexMatrix, b: &ComplexMatrix, algo: MulAlgo) -> Result<ComplexMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (re, im) = matmul_planes(&a.re, &a.im, &b.re, &b.im, a.rows, a.cols, b.cols, algo);
    Ok(ComplexMatrix {
        rows: a.rows,
        cols: b.cols,
        re,
        im,
    })
}

/// Planar complex GEMM over any [`Scalar`]. Each output entry is reduced
/// sequentially in ascending inner index.
#[allow(clippy::too_many_arguments)]
pub fn matmul_planes<S: Scalar>(
    a_re: &[S],
    a_im: &[S],
    b_re: &[S],
    b_im: &[S],
    n: usize,
    k: usize,
    m: usize,
    algo: MulAlgo,
) -> (Vec<S>, Vec<S>) {
    let mut out_re = vec![S::zero(); n * m];
    let mut out_im = vec![S::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = (S::zero(), S::zero());
            for l in 0..k {
                let x = (a_re[i * k + l], a_im[i * k + l]);
                let y = (b_re[l * m + j], b_im[l * m + j]);
                let p = match algo {
                    MulAlgo::Naive => cmul_naive_with(x, y),
                    MulAlgo::Gauss => cmul_gauss_with(x, y),
                };
                acc = if l == 0 { p } else { (acc.0 + p.0, acc.1 + p.1) };
            }
            out_re[i * m + j] = acc.0;
            out_im[i * m + j] = acc.1;
        }
    }
    (out_re, out_im)
}

pub fn frobenius_norm(a: &ComplexMatrix) -> f64 {
    a.re
        .iter()
        .zip(&a.im)
        .map(|(r, i)| r * r + i * i)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{count_ops, Counted};

    fn c(re: f64, im: f64) -> ComplexScalar {
        ComplexScalar::new(re, im)
    }

    #[test]
    fn cmul_examples() {
        let z = c(-2.5, 7.0);
        assert_eq!(cmul_naive(ComplexScalar::ONE, z), z);
        assert_eq!(cmul_gauss(ComplexScalar::ONE, z), z);
        assert_eq!(cmul_naive(ComplexScalar::I, ComplexScalar::I), c(-1.0, 0.0));
        assert_eq!(cmul_naive(c(2.0, 3.0), c(4.0, -1.0)), c(11.0, 10.0));
        assert_eq!(cmul_gauss(c(2.0, 3.0), c(4.0, -1.0)), c(11.0, 10.0));
    }

    #[test]
    fn gauss_uses_three_multiplications() {
        let a = (Counted(1.5), Counted(-2.0));
        let b = (Counted(0.5), Counted(3.0));
        let (_, naive) = count_ops(|| cmul_naive_with(a, b));
        let (_, gauss) = count_ops(|| cmul_gauss_with(a, b));
        assert_eq!((naive.mults, naive.adds), (4, 2));
        assert_eq!((gauss.mults, gauss.adds), (3, 5));
    }

    #[test]
    fn matmul_identity_and_scalar_case() {
        let a = ComplexMatrix::from_fn(3, 2, |r, k| c(r as f64 - 0.5, k as f64 * 1.25));
        for algo in [MulAlgo::Naive, MulAlgo::Gauss] {
            assert_eq!(a.matmul(&ComplexMatrix::identity(2), algo).unwrap(), a);
        }
        let x = ComplexMatrix::column(&[c(2.0, 3.0)]).unwrap();
        let y = ComplexMatrix::column(&[c(4.0, -1.0)]).unwrap();
        assert_eq!(x.matmul(&y, MulAlgo::Gauss).unwrap().get(0, 0), c(11.0, 10.0));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = ComplexMatrix::zeros(2, 3);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b, MulAlgo::Naive),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(ComplexMatrix::zeros(4, 4).frobenius_norm(), 0.0);
        assert_eq!(ComplexMatrix::column(&[c(3.0, 4.0)]).unwrap().frobenius_norm(), 5.0);
        let m = ComplexMatrix::from_entries(1, 3, &[c(2.0, 0.5), c(-1.0, 0.2), c(0.3, 3.0)]).unwrap();
        // 4 + 0.25 + 1 + 0.04 + 0.09 + 9 = 14.38
        assert!((m.frobenius_norm() - 14.38f64.sqrt()).abs() < 1e-15);
        assert!((m.frobenius_norm() - 3.79210).abs() < 1e-5);
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(RealMatrix::new(2, 2, vec![0.0; 3]), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            RealMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(ComplexMatrix::new(1, 1, vec![1.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn real_matmul_matches_matvec() {
        let a = RealMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        let x = [1.0, -2.0, 0.5, 3.0];
        let xm = RealMatrix::new(4, 1, x.to_vec()).unwrap();
        assert_eq!(a.matmul(&xm).unwrap().data(), a.matvec(&x).unwrap().as_slice());
    }
}
