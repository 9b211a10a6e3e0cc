//! Compressed sparse rows and the direct solver behind every linear solve.

use std::io::Write;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, entries: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[i + 1] += 1;
                col_idx.push(j);
                values.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..self.n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_ptr, col_idx, values }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    /// `A x`, each row accumulated in twice the working precision (error-free
    /// products and sums), so residuals of large cancelling terms are exact
    /// up to the final rounding.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows).map(|i| dot2(self.row(i).map(|(j, v)| (v, x[j])))).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut b = TripletBuilder::new(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                b.add(j, i, v);
            }
        }
        b.build()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut m = 0.0f64;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m = m.max((v - t.get(i, j)).abs());
            }
        }
        m
    }

    pub fn write_matrix_market(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Matrix, right-hand side and the sizes of the unknown blocks.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub blocks: Vec<(&'static str, usize)>,
}

impl SparseSystem {
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.matrix.mul_vec(x);
        ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }

    pub fn write_matrix_market(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.mtx")))?);
        self.matrix.write_matrix_market(&mut f)?;
        let mut r = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_rhs.mtx")))?);
        writeln!(r, "%%MatrixMarket matrix array real general")?;
        writeln!(r, "{} 1", self.rhs.len())?;
        for v in &self.rhs {
            writeln!(r, "{v:.17e}")?;
        }
        Ok(())
    }
}

/// Compensated dot product (Ogita, Rump and Oishi's Dot2).
pub fn dot2(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (a, b) in pairs {
        let p = a * b;
        let ep = a.mul_add(b, -p);
        let t = s + p;
        let z = t - s;
        let es = (s - (t - z)) + (p - z);
        s = t;
        c += ep + es;
    }
    s + c
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sparse LU factorization with one step of iterative refinement per solve.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    matrix: CsrMatrix,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.matrix.n_rows).field("nnz", &self.matrix.nnz()).finish()
    }
}

impl SparseLu {
    pub fn factor(matrix: &CsrMatrix) -> Result<Self> {
        if matrix.n_rows != matrix.n_cols {
            return Err(Error::ShapeMismatch(format!("{}x{} system", matrix.n_rows, matrix.n_cols)));
        }
        let mut trip = Vec::with_capacity(matrix.nnz());
        for i in 0..matrix.n_rows {
            for (j, v) in matrix.row(i) {
                trip.push(Triplet::new(i, j, v));
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.n_rows, matrix.n_cols, &trip)
            .map_err(|e| Error::SingularSystem(format!("matrix construction failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::SingularSystem(format!("factorization failed: {e:?}")))?;
        Ok(Self { lu, matrix: matrix.clone() })
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
        self.lu.solve_in_place(x.as_mat_mut());
        (0..b.len()).map(|i| x[i]).collect()
    }

    /// Solves `A x = b`; fails if the result is not finite or the residual
    /// exceeds `1e-10 max(1, |b|_∞)` (a numerically singular matrix).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n() {
            return Err(Error::ShapeMismatch(format!("rhs of length {} for {} unknowns", b.len(), self.n())));
        }
        let mut x = self.raw_solve(b);
        let r: Vec<f64> = self.matrix.mul_vec(&x).iter().zip(b).map(|(a, b)| b - a).collect();
        let dx = self.raw_solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        let res = inf_norm(&self.matrix.mul_vec(&x).iter().zip(b).map(|(a, b)| a - b).collect::<Vec<_>>());
        let bound = 1e-10 * inf_norm(b).max(1.0);
        if res > bound {
            return Err(Error::SingularSystem(format!("residual {res:.3e} exceeds {bound:.3e}")));
        }
        Ok(x)
    }
}

pub fn linear_solve(system: &SparseSystem) -> Result<Vec<f64>> {
    SparseLu::factor(&system.matrix)?.solve(&system.rhs)
}

/// Dense LU of a small matrix, used for the interface subsystem.
pub struct DenseLu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    a: Mat<f64>,
}

impl DenseLu {
    pub fn factor(a: Mat<f64>) -> Self {
        Self { lu: a.partial_piv_lu(), a }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = Col::<f64>::from_fn(n, |i| b[i]);
        self.lu.solve_in_place(x.as_mat_mut());
        // one refinement step
        let r = Col::<f64>::from_fn(n, |i| b[i]) - &self.a * &x;
        let mut d = r.clone();
        self.lu.solve_in_place(d.as_mat_mut());
        x += &d;
        let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite dense solution".into()));
        }
        let r = Col::<f64>::from_fn(n, |i| b[i]) - &self.a * &x;
        let res = (0..n).fold(0.0f64, |m, i| m.max(r[i].abs()));
        let bound = 1e-10 * inf_norm(b).max(1.0);
        if res > bound {
            return Err(Error::SingularSystem(format!("dense residual {res:.3e} exceeds {bound:.3e}")));
        }
        Ok(out)
    }

    /// Solves for several right-hand sides at once, with one refinement step.
    pub fn solve_mat(&self, b: Mat<f64>) -> Result<Mat<f64>> {
        let mut x = b.clone();
        self.lu.solve_in_place(x.as_mut());
        let mut d = &b - &self.a * &x;
        self.lu.solve_in_place(d.as_mut());
        x += &d;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !x[(i, j)].is_finite() {
                    return Err(Error::SingularSystem("non-finite dense solution".into()));
                }
            }
        }
        Ok(x)
    }
}
