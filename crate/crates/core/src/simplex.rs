//! Dense two-phase primal simplex with Bland's anti-cycling rule, for
//! standard-form programs `min c.x  s.t.  A x = b, x >= 0`. Desk-scale dense
//! tableau; Bland's rule (smallest eligible index in and out) guarantees
//! termination under degeneracy.

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};

/// Standard-form linear program.
#[derive(Debug, Clone)]
pub struct LinearProgram<T: Real> {
    pub n_vars: usize,
    /// Row-major constraint matrix, `n_rows x n_vars`.
    pub constraints: Vec<T>,
    pub rhs: Vec<T>,
    pub objective: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LpSolution<T: Real> {
    pub x: Vec<T>,
    pub value: T,
    pub iterations: usize,
}

struct Tableau<T: Real> {
    rows: usize,
    width: usize, // columns including rhs
    data: Vec<T>,
    basis: Vec<usize>,
    eps: T,
}

impl<T: Real> Tableau<T> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.width + j]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let pivot = self.at(row, col);
        for j in 0..w {
            *self.at_mut(row, j) /= pivot;
        }
        for i in 0..self.rows {
            if i == row {
                continue;
            }
            let factor = self.at(i, col);
            if factor == T::zero() {
                continue;
            }
            for j in 0..w {
                let v = self.at(row, j);
                *self.at_mut(i, j) -= factor * v;
            }
            *self.at_mut(i, col) = T::zero();
        }
        self.basis[row] = col;
    }

    /// One simplex phase over the permitted columns. Returns the iteration
    /// count; errors with `LpUnbounded` when a column prices out with no
    /// blocking row.
    fn run(&mut self, cost: &[T], n_cols: usize, cap: usize) -> Result<usize> {
        let rhs_col = self.width - 1;
        for it in 0..cap {
            // reduced costs from the current basis (priced directly; the
            // tableau stays B^-1 A throughout)
            let mut entering = None;
            for j in 0..n_cols {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut red = cost[j];
                for i in 0..self.rows {
                    let cb = cost[self.basis[i]];
                    if cb != T::zero() {
                        red -= cb * self.at(i, j);
                    }
                }
                if red < -self.eps {
                    entering = Some(j);
                    break; // Bland: smallest index
                }
            }
            let Some(col) = entering else {
                return Ok(it);
            };
            let mut leaving: Option<(usize, T)> = None;
            for i in 0..self.rows {
                let a = self.at(i, col);
                if a > self.eps {
                    let ratio = self.at(i, rhs_col) / a;
                    let better = match leaving {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br - self.eps
                                || (ratio < br + self.eps && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((row, _)) = leaving else {
                return Err(Error::LpUnbounded);
            };
            self.pivot(row, col);
        }
        Err(Error::Internal(format!(
            "simplex did not terminate within {cap} pivots"
        )))
    }
}

/// Solves a standard-form program by the two-phase method.
pub fn solve_lp<T: Real>(lp: &LinearProgram<T>) -> Result<LpSolution<T>> {
    let m = lp.rhs.len();
    let n = lp.n_vars;
    if lp.constraints.len() != m * n || lp.objective.len() != n {
        return Err(Error::Validation("linear program shape mismatch".into()));
    }
    if m == 0 || n == 0 {
        return Err(Error::Validation("empty linear program".into()));
    }
    let scale = lp
        .constraints
        .iter()
        .chain(lp.rhs.iter())
        .fold(T::one(), |a, v| a.max(v.abs()));
    let eps = cast::<T>(1e-11) * scale;

    // tableau with one artificial per row, rhs made nonnegative
    let width = n + m + 1;
    let mut data = vec![T::zero(); m * width];
    for i in 0..m {
        let flip = lp.rhs[i] < T::zero();
        for j in 0..n {
            let v = lp.constraints[i * n + j];
            data[i * width + j] = if flip { -v } else { v };
        }
        data[i * width + n + i] = T::one();
        data[i * width + width - 1] = lp.rhs[i].abs();
    }
    let mut tab = Tableau {
        rows: m,
        width,
        data,
        basis: (n..n + m).collect(),
        eps,
    };

    let cap = 200 * (n + m) + 10_000;

    // phase 1: minimize the artificial mass
    let mut phase1_cost = vec![T::zero(); n + m];
    for c in phase1_cost.iter_mut().skip(n) {
        *c = T::one();
    }
    let it1 = tab.run(&phase1_cost, n + m, cap)?;
    let mut infeas = T::zero();
    for i in 0..m {
        if tab.basis[i] >= n {
            infeas += tab.at(i, width - 1);
        }
    }
    if infeas > cast::<T>(1e-8) * scale {
        return Err(Error::LpInfeasible);
    }
    // drive zero-level artificials out of the basis; rows with no original
    // coefficient left are redundant and stay parked on their artificial
    for i in 0..m {
        if tab.basis[i] >= n {
            let mut col = None;
            for j in 0..n {
                if tab.at(i, j).abs() > eps && !tab.basis.contains(&j) {
                    col = Some(j);
                    break;
                }
            }
            if let Some(j) = col {
                tab.pivot(i, j);
            }
        }
    }

    // phase 2 on the original columns; parked artificials keep cost zero and
    // never re-enter because entering scans original columns only
    let mut phase2_cost = vec![T::zero(); n + m];
    phase2_cost[..n].copy_from_slice(&lp.objective);
    let it2 = tab.run(&phase2_cost, n, cap)?;

    let mut x = vec![T::zero(); n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.at(i, width - 1);
        }
    }
    let value = lp
        .objective
        .iter()
        .zip(x.iter())
        .map(|(&c, &v)| c * v)
        .sum();
    Ok(LpSolution {
        x,
        value,
        iterations: it1 + it2,
    })
}

/// Exhaustive vertex enumeration for tiny programs; test oracle only.
#[doc(hidden)]
pub fn brute_force_lp<T: Real>(lp: &LinearProgram<T>) -> Option<(Vec<T>, T)> {
    let m = lp.rhs.len();
    let n = lp.n_vars;
    let mut best: Option<(Vec<T>, T)> = None;
    let mut combo = vec![0usize; m];
    fn visit<T: Real>(
        lp: &LinearProgram<T>,
        combo: &mut Vec<usize>,
        depth: usize,
        start: usize,
        best: &mut Option<(Vec<T>, T)>,
    ) {
        let m = lp.rhs.len();
        let n = lp.n_vars;
        if depth == m {
            // solve the square system on the chosen columns
            let mut a = crate::linalg::DenseMatrix::<T>::zeros(m);
            for i in 0..m {
                for (k, &j) in combo.iter().enumerate() {
                    a.set(i, k, lp.constraints[i * n + j]);
                }
            }
            let Ok(sol) = crate::linalg::solve_refined(&a, &lp.rhs) else {
                return;
            };
            if sol.iter().any(|&v| v < cast(-1e-9)) {
                return;
            }
            let mut x = vec![T::zero(); n];
            for (k, &j) in combo.iter().enumerate() {
                x[j] = sol[k].max(T::zero());
            }
            // verify feasibility of the full system
            for i in 0..m {
                let lhs: T = (0..n).map(|j| lp.constraints[i * n + j] * x[j]).sum();
                if (lhs - lp.rhs[i]).abs() > cast(1e-7) {
                    return;
                }
            }
            let value: T = lp
                .objective
                .iter()
                .zip(x.iter())
                .map(|(&c, &v)| c * v)
                .sum();
            match best {
                Some((_, b)) if *b <= value => {}
                _ => *best = Some((x, value)),
            }
            return;
        }
        for j in start..n {
            combo[depth] = j;
            visit(lp, combo, depth + 1, j + 1, best);
        }
    }
    visit(lp, &mut combo, 0, 0, &mut best);
    best
}
