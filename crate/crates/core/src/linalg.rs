//! Dense row-major `f64` matrices, the norms used by the group costs, and a
//! one-sided Jacobi singular value decomposition.
//!
//! Row `i` of a feature or perturbation matrix is sample `i`.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Sweep cap for the Jacobi SVD.
pub const SVD_MAX_SWEEPS: usize = 100;
/// A column pair is treated as orthogonal once `|a_p . a_q| <= tol * |a_p| |a_q|`.
pub const SVD_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// One line per row. The precision flag applies to every entry (default 4).
impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(4);
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                let sep = if j == 0 { "" } else { " " };
                write!(f, "{sep}{v:>w$.p$}", w = p + 4)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Matrix {
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
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

    /// `rows x cols` matrix with `diag` on the main diagonal.
    pub fn from_diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(n, d, data)
    }

    /// Matrix with i.i.d. standard normal entries.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(rows, cols);
        for v in &mut m.data {
            *v = StandardNormal.sample(rng);
        }
        m
    }

    /// Outer product `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                m[(i, j)] = a * b;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// New matrix made of the selected rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
    }

    fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )))
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|a| *a *= s);
        out
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    /// Trace inner product `<A, B>`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sq.iter_mut().zip(self.row(i)) {
                *s += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm2(self.row(i))).collect()
    }

    /// The l1,2 group norm: sum of the columns' Euclidean norms.
    pub fn group_norm_12(&self) -> f64 {
        self.column_norms().iter().sum()
    }

    /// Sum of singular values.
    pub fn nuclear_norm(&self) -> Result<f64> {
        Ok(self.svd()?.singular_values.iter().sum())
    }

    /// Mean of the rows.
    pub fn row_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Thin SVD `A = U diag(s) V^T` with `k = min(rows, cols)`.
    pub fn svd(&self) -> Result<Svd> {
        if !self.is_finite() {
            return Err(Error::NonFinite("svd input".into()));
        }
        if self.rows >= self.cols {
            jacobi_svd_tall(self)
        } else {
            let s = jacobi_svd_tall(&self.transpose())?;
            Ok(Svd {
                u: s.vt.transpose(),
                singular_values: s.singular_values,
                vt: s.u.transpose(),
            })
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Thin singular value decomposition.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x k`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `k`.
    pub singular_values: Vec<f64>,
    /// `k x n`, orthonormal rows.
    pub vt: Matrix,
}

impl Svd {
    /// `U diag(sigma) V^T` for a replacement spectrum.
    pub fn recompose(&self, sigma: &[f64]) -> Matrix {
        let (m, k) = self.u.shape();
        let n = self.vt.cols();
        let mut out = Matrix::zeros(m, n);
        for (r, &s) in sigma.iter().enumerate().take(k) {
            if s == 0.0 {
                continue;
            }
            let vr = self.vt.row(r);
            for i in 0..m {
                let c = s * self.u[(i, r)];
                if c == 0.0 {
                    continue;
                }
                for (o, &v) in out.row_mut(i).iter_mut().zip(vr) {
                    *o += c * v;
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.recompose(&self.singular_values)
    }

    /// Number of singular values above `rel_tol * sigma_1`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top)
            .count()
    }
}

/// One-sided (Hestenes) Jacobi on the columns of a tall matrix.
fn jacobi_svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    // Columns of `a` become contiguous rows of `w`; likewise for V.
    let mut w = a.transpose();
    let mut v = Matrix::identity(n);

    // columns below this squared norm are numerically zero and left alone
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = n < 2;
    for _sweep in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let wp = w.row(p);
                    let wq = w.row(q);
                    (dot(wp, wp), dot(wq, wq), dot(wp, wq))
                };
                if gamma == 0.0
                    || alpha.min(beta) <= negligible
                    || gamma.abs() <= SVD_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge within {SVD_MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|j| norm2(w.row(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    // below this a column is rounding noise and its direction is meaningless
    let floor = (n as f64 * f64::EPSILON * a.frobenius_norm()).max(f64::MIN_POSITIVE * 1e10);
    for (r, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        vt.row_mut(r).copy_from_slice(v.row(j));
        if s > floor {
            for (i, &x) in w.row(j).iter().enumerate() {
                u[(i, r)] = x / s;
            }
        } else {
            missing.push(r);
        }
    }
    if !missing.is_empty() {
        complete_orthonormal_columns(&mut u, &missing)?;
    }
    Ok(Svd {
        u,
        singular_values: sigma,
        vt,
    })
}

#[inline]
fn rotate_rows(w: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = w.cols;
    let (head, tail) = w.data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fill the listed (zero) columns of `u` with unit vectors orthogonal to
/// every other column, by Gram-Schmidt over the standard basis.
fn complete_orthonormal_columns(u: &mut Matrix, missing: &[usize]) -> Result<()> {
    let (m, k) = u.shape();
    let mut filled: Vec<usize> = (0..k).filter(|c| !missing.contains(c)).collect();
    let mut basis = 0;
    for &target in missing {
        loop {
            if basis == m {
                return Err(Error::Numerical("cannot complete orthonormal basis".into()));
            }
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &c in &filled {
                    let col = u.column(c);
                    let proj = dot(&cand, &col);
                    cand.iter_mut().zip(&col).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-8 {
                cand.iter_mut().for_each(|x| *x /= nrm);
                u.set_column(target, &cand);
                filled.push(target);
                break;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(m(&[&[3.0, 4.0], &[0.0, 0.0]]).frobenius_norm(), 5.0);
        assert_eq!(Matrix::zeros(3, 2).frobenius_norm(), 0.0);

        let mut rng = Pcg64::seed_from_u64(11);
        let a = Matrix::random_normal(5, 4, &mut rng);
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
        assert!((a.frobenius_norm() - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn group_norm_examples() {
        assert_eq!(m(&[&[3.0, 4.0], &[0.0, 0.0]]).group_norm_12(), 7.0);
        assert_eq!(Matrix::zeros(2, 2).group_norm_12(), 0.0);

        let mut rng = Pcg64::seed_from_u64(12);
        let a = Matrix::random_normal(4, 3, &mut rng);
        let expected: f64 = (0..3)
            .map(|j| (0..4).map(|i| a[(i, j)].powi(2)).sum::<f64>().sqrt())
            .sum();
        assert!((a.group_norm_12() - expected).abs() < 1e-14);
    }

    #[test]
    fn nuclear_examples() {
        let d = Matrix::from_diag(2, 2, &[3.0, 1.0]);
        assert!((d.nuclear_norm().unwrap() - 4.0).abs() < 1e-14);

        // |u| = 2, |v| = 3
        let u = [2.0, 0.0, 0.0];
        let v = [0.0, 3.0 / 5.0 * 3.0, 4.0 / 5.0 * 3.0];
        let r1 = Matrix::outer(&u, &v);
        assert!((r1.nuclear_norm().unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn svd_identity_and_diag() {
        let s = Matrix::identity(3).svd().unwrap();
        assert_eq!(s.singular_values, vec![1.0, 1.0, 1.0]);

        let s = Matrix::from_diag(2, 2, &[2.0, 5.0]).svd().unwrap();
        assert_eq!(s.singular_values, vec![5.0, 2.0]);
        // U and V are signed permutations.
        for x in s.u.as_slice().iter().chain(s.vt.as_slice()) {
            assert!(x.abs() == 0.0 || (x.abs() - 1.0).abs() < 1e-15);
        }
        assert!(
            s.reconstruct()
                .sub(&Matrix::from_diag(2, 2, &[2.0, 5.0]))
                .unwrap()
                .max_abs()
                < 1e-15
        );
    }

    #[test]
    fn svd_zero_and_rank_deficient_keep_orthonormal_u() {
        let z = Matrix::zeros(4, 3);
        let s = z.svd().unwrap();
        assert_eq!(s.singular_values, vec![0.0; 3]);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(utu.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);

        let r1 = Matrix::outer(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 0.5]);
        let s = r1.svd().unwrap();
        assert_eq!(s.numerical_rank(1e-9), 1);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(utu.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn wide_matrix_svd_reconstructs() {
        let mut rng = Pcg64::seed_from_u64(5);
        let a = Matrix::random_normal(3, 7, &mut rng);
        let s = a.svd().unwrap();
        assert_eq!(s.u.shape(), (3, 3));
        assert_eq!(s.vt.shape(), (3, 7));
        assert!(s.reconstruct().sub(&a).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(
            Matrix::from_vec(0, 2, vec![]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn norm_ordering() {
        let mut rng = Pcg64::seed_from_u64(3);
        for _ in 0..50 {
            let a = Matrix::random_normal(4, 5, &mut rng);
            let nuc = a.nuclear_norm().unwrap();
            let fro = a.frobenius_norm();
            assert!(nuc >= fro - 1e-12);
            assert!(fro >= a.max_abs());
        }
    }
}
