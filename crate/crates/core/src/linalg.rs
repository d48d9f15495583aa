//! Small dense linear algebra: LU solves with iterative refinement and
//! symmetric eigenvalues. Problem sizes stay at desk scale, so plain dense
//! routines are enough.

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// Dense row-major square matrix.
#[derive(Debug, Clone)]
pub struct DenseMatrix<T: Real> {
    n: usize,
    a: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.n + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        for i in 0..self.n {
            let row = self.row(i);
            let mut acc = T::zero();
            for j in 0..self.n {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

/// LU factorization with partial pivoting.
pub struct LuFactors<T: Real> {
    n: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
}

pub fn lu_factor<T: Real>(m: &DenseMatrix<T>) -> Result<LuFactors<T>> {
    let n = m.n;
    let mut lu = m.a.clone();
    let mut piv = vec![0usize; n];
    for k in 0..n {
        // pivot search in column k
        let mut p = k;
        let mut best = lu[k * n + k].abs();
        for i in (k + 1)..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == T::zero() {
            return Err(Error::LinearSolve(format!("singular matrix at column {k}")));
        }
        piv[k] = p;
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
        }
        let pivot = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / pivot;
            lu[i * n + k] = factor;
            if factor != T::zero() {
                let (upper, lower) = lu.split_at_mut(i * n);
                let row_k = &upper[k * n + k + 1..k * n + n];
                let row_i = &mut lower[k + 1..n];
                for (ri, rk) in row_i.iter_mut().zip(row_k.iter()) {
                    *ri = *ri - factor * *rk;
                }
            }
        }
    }
    Ok(LuFactors { n, lu, piv })
}

impl<T: Real> LuFactors<T> {
    /// Solves in place.
    pub fn solve(&self, b: &mut [T]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            if bk != T::zero() {
                for i in (k + 1)..n {
                    b[i] = b[i] - self.lu[i * n + k] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            b[k] = b[k] / self.lu[k * n + k];
            let bk = b[k];
            if bk != T::zero() {
                for i in 0..k {
                    b[i] = b[i] - self.lu[i * n + k] * bk;
                }
            }
        }
    }
}

/// LU solve with two steps of iterative refinement. Refinement pushes the
/// residual to the round-off floor, which the discount extrapolation needs.
pub fn solve_refined<T: Real>(m: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    let factors = lu_factor(m)?;
    let mut x = b.to_vec();
    factors.solve(&mut x);
    let mut ax = vec![T::zero(); m.n];
    for _ in 0..2 {
        m.matvec(&x, &mut ax);
        let mut r: Vec<T> = b.iter().zip(ax.iter()).map(|(&bi, &ai)| bi - ai).collect();
        factors.solve(&mut r);
        for (xi, ri) in x.iter_mut().zip(r.iter()) {
            *xi += *ri;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("solution has non-finite entries".into()));
    }
    Ok(x)
}

/// Solves `A w = b` for matrices whose rows sum to `zeroth` exactly (so
/// `A 1 = zeroth 1` holds to the last bit), returning the solution split as
/// `(deviation, constant)` with the deviation centered at zero mean.
///
/// Refining the split keeps every residual evaluation on O(deviation)
/// magnitudes: the constant, which grows like `1/zeroth`, never enters a
/// difference, so the residual floor stays near round-off even at tiny
/// zeroth-order coefficients.
pub fn solve_split<T: Real>(m: &DenseMatrix<T>, b: &[T], zeroth: T) -> Result<(Vec<T>, T)> {
    let n = m.n;
    let factors = lu_factor(m)?;
    let mut x = b.to_vec();
    factors.solve(&mut x);
    let mean = |v: &[T]| -> T { v.iter().copied().sum::<T>() / cast::<T>(n as f64) };
    let mut s = mean(&x);
    let mut dev: Vec<T> = x.iter().map(|&v| v - s).collect();
    let mut av = vec![T::zero(); n];
    for _ in 0..3 {
        m.matvec(&dev, &mut av);
        let mut r: Vec<T> = (0..n).map(|i| b[i] - av[i] - zeroth * s).collect();
        factors.solve(&mut r);
        let dm = mean(&r);
        for (d, ri) in dev.iter_mut().zip(r.iter()) {
            *d += *ri - dm;
        }
        s += dm;
    }
    if !s.is_finite() || dev.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("split solve produced non-finite values".into()));
    }
    Ok((dev, s))
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub fn symmetric_eigenvalues<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    if a.len() != n * n {
        return Err(Error::Validation(format!(
            "matrix buffer has length {}, expected {}",
            a.len(),
            n * n
        )));
    }
    let mut m = a.to_vec();
    let tol = cast::<T>(1e-14)
        * m.iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
            .max(T::one());
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (cast::<T>(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lu_solves_small_system() {
        let mut m = DenseMatrix::<f64>::zeros(3);
        let a = [[4.0, 1.0, 0.0], [1.0, 5.0, 2.0], [0.0, 2.0, 6.0]];
        for i in 0..3 {
            for j in 0..3 {
                m.set(i, j, a[i][j]);
            }
        }
        let x_true = [1.0, -2.0, 3.0];
        let mut b = [0.0; 3];
        m.matvec(&x_true, &mut b);
        let x = solve_refined(&m, &b).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert_relative_eq!(xi, ti, epsilon = 1e-13);
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let mut m = DenseMatrix::<f64>::zeros(2);
        m.set(0, 0, 1.0);
        m.set(0, 1, 2.0);
        m.set(1, 0, 2.0);
        m.set(1, 1, 4.0);
        assert!(solve_refined(&m, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn refinement_recovers_tiny_residuals_on_stiff_diagonal() {
        // Diagonally dominant with a wide scale spread, the regime the
        // discount solver hits at small lambda.
        let n = 32;
        let mut m = DenseMatrix::<f64>::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    m.set(i, j, 1e-4 + 50.0);
                } else {
                    m.set(i, j, -50.0 / (n as f64 - 1.0) * 0.99);
                }
            }
        }
        let b = vec![0.7; n];
        let x = solve_refined(&m, &b).unwrap();
        let mut ax = vec![0.0; n];
        m.matvec(&x, &mut ax);
        let res = ax
            .iter()
            .zip(b.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn jacobi_eigenvalues_match_analytic_2x2() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let eig = symmetric_eigenvalues(&[2.0f64, 1.0, 1.0, 2.0], 2).unwrap();
        assert_relative_eq!(eig[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(eig[1], 3.0, epsilon = 1e-12);
    }
}
