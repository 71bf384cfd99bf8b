//! Dense block kernels: row-major matrices, LU with partial pivoting,
//! multi-column solves and the rank update `M - U * W`.
//!
//! Every kernel has a `*_counted` variant that adds the exact number of
//! scalar arithmetic operations it performed to a [`Flops`] counter. The
//! simulator charges compute time from these counts.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Pivots smaller than this in absolute value are treated as exact zeros.
pub const SINGULAR_PIVOT: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is singular (zero pivot in column {column})")]
    SingularMatrix { column: usize },
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("matrix must have at least one row and one column, got {rows}x{cols}")]
    Empty { rows: usize, cols: usize },
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {actual}")]
    EntryCount {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

fn mismatch(op: &'static str, detail: String) -> LinalgError {
    LinalgError::DimensionMismatch { op, detail }
}

/// Running count of scalar arithmetic operations.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Flops(pub u64);

impl Flops {
    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting empty shapes and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::EntryCount {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged or empty input;
    /// meant for literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        assert!(
            rows.iter().all(|r| r.as_ref().len() == cols),
            "ragged matrix literal"
        );
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec(rows.len(), cols, data).expect("invalid matrix literal")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Copy of the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "block out of range"
        );
        Matrix::from_fn(rows, cols, |r, c| self[(r0 + r, c0 + c)])
    }

    /// Overwrites the block at `(r0, c0)` with `src`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix) {
        assert!(
            r0 + src.rows <= self.rows && c0 + src.cols <= self.cols,
            "block out of range"
        );
        for r in 0..src.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + src.cols].copy_from_slice(src.row(r));
        }
    }

    /// Splits off column groups of the given widths, left to right.
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Matrix>, LinalgError> {
        let total: usize = widths.iter().sum();
        if total != self.cols {
            return Err(mismatch(
                "split_cols",
                format!("widths sum to {total}, matrix has {} columns", self.cols),
            ));
        }
        let mut offset = 0;
        Ok(widths
            .iter()
            .map(|&w| {
                let b = self.block(0, offset, self.rows, w);
                offset += w;
                b
            })
            .collect())
    }

    /// Concatenates matrices left to right.
    pub fn hcat(parts: &[Matrix]) -> Result<Matrix, LinalgError> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("hcat", "no blocks".into()))?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(mismatch(
                "hcat",
                format!("row counts {} and {}", rows, bad.rows),
            ));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        Ok(out)
    }

    /// Stacks matrices top to bottom.
    pub fn vcat(parts: &[Matrix]) -> Result<Matrix, LinalgError> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("vcat", "no blocks".into()))?;
        let cols = first.cols;
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(mismatch(
                "vcat",
                format!("column counts {} and {}", cols, bad.cols),
            ));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix {
            rows: data.len() / cols,
            cols,
            data,
        })
    }

    pub fn add_counted(&self, other: &Matrix, flops: &mut Flops) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                "add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        flops.add(self.data.len() as u64);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                "sub",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(mismatch(
                "matmul",
                format!("{:?} * {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(p);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Max-norm of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Packed LU factors of a square matrix with the row permutation applied
/// during elimination. `perm[i]` is the input row that ended up in row `i`,
/// so `P * M = L * U` with `(P * M)[i] = M[perm[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Unit lower-triangular factor.
    pub fn lower(&self) -> Matrix {
        Matrix::from_fn(self.dim(), self.dim(), |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Greater => self.lu[(r, c)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        })
    }

    pub fn upper(&self) -> Matrix {
        Matrix::from_fn(self.dim(), self.dim(), |r, c| {
            if r <= c {
                self.lu[(r, c)]
            } else {
                0.0
            }
        })
    }

    /// Rows of `m` reordered by the pivot permutation.
    pub fn permute_rows(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows, m.cols, |r, c| m[(self.perm[r], c)])
    }
}

pub fn lu_factor(m: &Matrix) -> Result<LuFactors, LinalgError> {
    lu_factor_counted(m, &mut Flops::default())
}

/// Gaussian elimination with partial (row) pivoting.
///
/// Charges one division per multiplier and two operations per updated
/// entry: `(2/3)n^3 - n^2/2 - n/6` in total.
pub fn lu_factor_counted(m: &Matrix, flops: &mut Flops) -> Result<LuFactors, LinalgError> {
    if !m.is_square() {
        return Err(mismatch(
            "lu_factor",
            format!("matrix is {}x{}, not square", m.rows, m.cols),
        ));
    }
    let n = m.rows;
    let mut lu = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < SINGULAR_PIVOT {
            return Err(LinalgError::SingularMatrix { column: k });
        }
        if p != k {
            for c in 0..n {
                lu.data.swap(k * n + c, p * n + c);
            }
            perm.swap(k, p);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let l = lu[(i, k)] / pivot;
            lu[(i, k)] = l;
            if l != 0.0 {
                for c in k + 1..n {
                    let u = lu[(k, c)];
                    lu[(i, c)] -= l * u;
                }
            }
        }
        let below = (n - k - 1) as u64;
        flops.add(below + 2 * below * below);
    }
    Ok(LuFactors { lu, perm })
}

pub fn lu_solve(f: &LuFactors, rhs: &Matrix) -> Result<Matrix, LinalgError> {
    lu_solve_counted(f, rhs, &mut Flops::default())
}

/// Forward and back substitution for every column of `rhs`.
/// Costs `2n^2 - n` operations per column.
pub fn lu_solve_counted(
    f: &LuFactors,
    rhs: &Matrix,
    flops: &mut Flops,
) -> Result<Matrix, LinalgError> {
    let n = f.dim();
    if rhs.rows != n {
        return Err(mismatch(
            "lu_solve",
            format!("factored dimension {n}, right-hand side has {} rows", rhs.rows),
        ));
    }
    let k = rhs.cols;
    let mut x = f.permute_rows(rhs);
    // L y = P b, unit diagonal
    for i in 1..n {
        for p in 0..i {
            let l = f.lu[(i, p)];
            for c in 0..k {
                let v = x[(p, c)];
                x[(i, c)] -= l * v;
            }
        }
    }
    // U x = y
    for i in (0..n).rev() {
        for p in i + 1..n {
            let u = f.lu[(i, p)];
            for c in 0..k {
                let v = x[(p, c)];
                x[(i, c)] -= u * v;
            }
        }
        let d = f.lu[(i, i)];
        for c in 0..k {
            x[(i, c)] /= d;
        }
    }
    let n64 = n as u64;
    flops.add((2 * n64 * n64 - n64) * k as u64);
    Ok(x)
}

/// Factor and solve in one step.
pub fn solve_counted(a: &Matrix, rhs: &Matrix, flops: &mut Flops) -> Result<Matrix, LinalgError> {
    let f = lu_factor_counted(a, flops)?;
    lu_solve_counted(&f, rhs, flops)
}

pub fn solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix, LinalgError> {
    solve_counted(a, rhs, &mut Flops::default())
}

pub fn gemm_sub(m: &Matrix, u: &Matrix, w: &Matrix) -> Result<Matrix, LinalgError> {
    gemm_sub_counted(m, u, w, &mut Flops::default())
}

/// `M - U * W`, accumulated entry by entry in the order `p = 0..inner`.
/// Costs `2 * rows * inner * cols` operations.
pub fn gemm_sub_counted(
    m: &Matrix,
    u: &Matrix,
    w: &Matrix,
    flops: &mut Flops,
) -> Result<Matrix, LinalgError> {
    if u.cols != w.rows || m.rows != u.rows || m.cols != w.cols {
        return Err(mismatch(
            "gemm_sub",
            format!(
                "M {:?}, U {:?}, W {:?}",
                m.shape(),
                u.shape(),
                w.shape()
            ),
        ));
    }
    let mut out = m.clone();
    for i in 0..u.rows {
        for p in 0..u.cols {
            let a = u[(i, p)];
            let wrow = w.row(p);
            let dst = &mut out.data[i * w.cols..(i + 1) * w.cols];
            for (d, &b) in dst.iter_mut().zip(wrow) {
                *d -= a * b;
            }
        }
    }
    flops.add(2 * (u.rows * u.cols * w.cols) as u64);
    Ok(out)
}
