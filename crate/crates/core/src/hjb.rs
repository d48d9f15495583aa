//! Bellman Hamiltonian evaluation and the monotone discounted solvers:
//! the generic discounted torus problem and the oscillatory problem, both by
//! Howard policy iteration on an M-matrix discretization.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::kernels::KernelSpec;
use crate::linalg::{solve_split, DenseMatrix};
use crate::nonlocal::{build_stencil_set, BuildOptions, NonlocalStencil, StencilSet};
use crate::scalar::{cast, to_f64, Real};

type DataFn<T, R> = dyn Fn(&[T], &[T], usize) -> R + Send + Sync;

/// Control problem data: a finite control set with drift and running cost,
/// both 1-periodic in the slow and the fast variable, plus the kernel family.
#[derive(Clone)]
pub struct ControlProblem<T: Real> {
    kernel: KernelSpec<T>,
    drift: Arc<DataFn<T, Vec<T>>>,
    cost: Arc<DataFn<T, T>>,
    lipschitz_c: T,
    data_bound: T,
    /// Declares that drift, cost and kernel do not depend on the fast
    /// variable; the rate harness uses this to skip oscillatory resolution.
    y_invariant: bool,
}

impl<T: Real> std::fmt::Debug for ControlProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("dim", &self.dim())
            .field("n_controls", &self.n_controls())
            .field("y_invariant", &self.y_invariant)
            .finish()
    }
}

impl<T: Real> ControlProblem<T> {
    pub fn new(
        kernel: KernelSpec<T>,
        drift: Arc<DataFn<T, Vec<T>>>,
        cost: Arc<DataFn<T, T>>,
        lipschitz_c: T,
        data_bound: T,
    ) -> Result<Self> {
        if lipschitz_c <= T::zero() || data_bound <= T::zero() {
            return Err(Error::Validation(
                "Lipschitz constant and data bound must be positive".into(),
            ));
        }
        Ok(Self {
            kernel,
            drift,
            cost,
            lipschitz_c,
            data_bound,
            y_invariant: false,
        })
    }

    pub fn with_y_invariant(mut self, flag: bool) -> Self {
        self.y_invariant = flag;
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    #[inline]
    pub fn n_controls(&self) -> usize {
        self.kernel.n_controls()
    }

    #[inline]
    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    #[inline]
    pub fn drift(&self, x: &[T], y: &[T], theta: usize) -> Vec<T> {
        (self.drift)(x, y, theta)
    }

    #[inline]
    pub fn cost(&self, x: &[T], y: &[T], theta: usize) -> T {
        (self.cost)(x, y, theta)
    }

    #[inline]
    pub fn lipschitz_c(&self) -> T {
        self.lipschitz_c
    }

    #[inline]
    pub fn data_bound(&self) -> T {
        self.data_bound
    }

    #[inline]
    pub fn y_invariant(&self) -> bool {
        self.y_invariant
    }
}

/// Running-cost table over `(fast grid point, control)`.
#[derive(Debug, Clone)]
pub struct CostTable<T: Real> {
    n_y: usize,
    n_controls: usize,
    values: Vec<T>,
}

impl<T: Real> CostTable<T> {
    pub fn from_fn(n_y: usize, n_controls: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(n_y * n_controls);
        for j in 0..n_y {
            for t in 0..n_controls {
                values.push(f(j, t));
            }
        }
        Self {
            n_y,
            n_controls,
            values,
        }
    }

    #[inline]
    pub fn n_y(&self) -> usize {
        self.n_y
    }

    #[inline]
    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    #[inline]
    pub fn get(&self, j: usize, theta: usize) -> T {
        self.values[j * self.n_controls + theta]
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n_y: self.n_y,
            n_controls: self.n_controls,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Freezes the effective running cost of the cell problem at `(x, p, phi)`:
/// `l^theta(y_j) = L^theta_{y_j} phi(x) + f^theta(x, y_j) . p + l^theta(x, y_j)`.
///
/// `stencils` must live on `phi`'s grid, one entry per cell-problem `y` point.
pub fn freeze_costs<T: Real>(
    problem: &ControlProblem<T>,
    stencils: &StencilSet<T>,
    x_index: usize,
    p: &[T],
    phi: &GridFunction<T>,
) -> Result<CostTable<T>> {
    if stencils.grid() != phi.grid() {
        return Err(Error::GridMismatch(
            "stencil set does not live on phi's grid".into(),
        ));
    }
    let x = phi.grid().point::<T>(x_index);
    let n_controls = problem.n_controls();
    let mut values = Vec::with_capacity(stencils.n_ys() * n_controls);
    for (j, y) in stencils.ys().iter().enumerate() {
        for theta in 0..n_controls {
            let nonlocal = stencils.stencil(j, theta).apply_values(phi.values(), x_index);
            let f = problem.drift(&x, y, theta);
            let dot: T = f.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
            values.push(nonlocal + dot + problem.cost(&x, y, theta));
        }
    }
    Ok(CostTable {
        n_y: stencils.n_ys(),
        n_controls,
        values,
    })
}

/// Evaluates the Bellman Hamiltonian
/// `H(x, y, p, phi) = sup_theta { -L^theta_y phi(x) - f^theta(x,y).p - l^theta(x,y) }`
/// and the attaining control.
pub fn hamiltonian_eval<T: Real>(
    problem: &ControlProblem<T>,
    stencils: &StencilSet<T>,
    x: &[T],
    y: &[T],
    p: &[T],
    phi: &GridFunction<T>,
) -> Result<(T, usize)> {
    if problem.n_controls() == 0 {
        return Err(Error::Validation("empty control set".into()));
    }
    if stencils.grid() != phi.grid() {
        return Err(Error::GridMismatch(
            "stencil set does not live on phi's grid".into(),
        ));
    }
    let x_index = phi.grid().locate(x)?;
    let y_index = locate_y(stencils, y)?;
    let mut best = T::neg_infinity();
    let mut best_theta = 0usize;
    for theta in 0..problem.n_controls() {
        let nonlocal = stencils
            .stencil(y_index, theta)
            .apply_values(phi.values(), x_index);
        let f = problem.drift(x, y, theta);
        let dot: T = f.iter().zip(p.iter()).map(|(&a, &b)| a * b).sum();
        let value = -nonlocal - dot - problem.cost(x, y, theta);
        if value > best {
            best = value;
            best_theta = theta;
        }
    }
    Ok((best, best_theta))
}

fn locate_y<T: Real>(stencils: &StencilSet<T>, y: &[T]) -> Result<usize> {
    let tol = cast::<T>(1e-9);
    for (j, candidate) in stencils.ys().iter().enumerate() {
        if candidate.len() == y.len()
            && candidate
                .iter()
                .zip(y.iter())
                .all(|(&a, &b)| {
                    let d = (a - b).abs();
                    d < tol || (T::one() - d).abs() < tol
                })
        {
            return Ok(j);
        }
    }
    Err(Error::GridMismatch(
        "y is not among the stencil set's frozen points".into(),
    ))
}

/// Solver knobs for Howard policy iteration.
#[derive(Debug, Clone)]
pub struct HowardOptions<T: Real> {
    pub tol: T,
    pub max_iterations: usize,
    pub initial_policy: Option<Vec<usize>>,
}

impl<T: Real> Default for HowardOptions<T> {
    fn default() -> Self {
        Self {
            tol: cast(1e-10),
            max_iterations: 500,
            initial_policy: None,
        }
    }
}

/// Solution of a discounted Bellman problem on the torus grid.
#[derive(Debug, Clone)]
pub struct DiscountedSolution<T: Real> {
    pub w: GridFunction<T>,
    pub lambda: T,
    pub residual: T,
    pub iterations: usize,
    pub policy: Vec<usize>,
}

/// Solves `lambda w + sup_theta { -L^theta_y w(y) - l^theta(y) } = 0` on the
/// fast grid. `stencils` must hold one `y` per grid point, in grid order.
pub fn solve_discounted<T: Real>(
    costs: &CostTable<T>,
    stencils: &StencilSet<T>,
    lambda: T,
    opts: &HowardOptions<T>,
) -> Result<DiscountedSolution<T>> {
    if lambda <= T::zero() {
        return Err(Error::Validation("discount must be positive".into()));
    }
    let grid = stencils.grid();
    if stencils.n_ys() != grid.len() || costs.n_y() != grid.len() {
        return Err(Error::GridMismatch(
            "cell solve needs one stencil and one cost row per grid point".into(),
        ));
    }
    if costs.n_controls() != stencils.n_controls() {
        return Err(Error::GridMismatch(
            "cost table and stencil set disagree on the control count".into(),
        ));
    }
    let refs: Vec<&NonlocalStencil<T>> = (0..grid.len())
        .flat_map(|j| (0..costs.n_controls()).map(move |t| (j, t)))
        .map(|(j, t)| stencils.stencil(j, t))
        .collect();
    let outcome = howard_solve(
        &grid,
        costs.n_controls(),
        lambda,
        &refs,
        None,
        costs.values(),
        opts,
    )?;
    let sol = DiscountedSolution {
        w: GridFunction::new(grid, outcome.w)?,
        lambda,
        residual: outcome.residual,
        iterations: outcome.iterations,
        policy: outcome.policy,
    };
    debug_assert!(
        sol.w.sup_norm() <= costs.sup_norm() / lambda + cast::<T>(1e-8),
        "discounted solution violates the comparison bound"
    );
    Ok(sol)
}

/// Solution of the oscillatory problem.
#[derive(Debug, Clone)]
pub struct EpsSolution<T: Real> {
    pub u: GridFunction<T>,
    pub eps_k: usize,
    pub residual: T,
    pub iterations: usize,
    pub policy: Vec<usize>,
}

/// Solves `u + sup_theta { -L^theta_{x/eps} u(x) - f^theta(x, x/eps) . Du(x)
/// - l^theta(x, x/eps) } = 0` for `eps = 1/k`. The drift is upwinded per the
/// frozen policy; the grid must resolve the fast scale (`n >= 8 k`).
pub fn solve_eps_problem<T: Real>(
    problem: &ControlProblem<T>,
    eps: T,
    grid: &TorusGrid,
    build: &BuildOptions<T>,
    opts: &HowardOptions<T>,
) -> Result<EpsSolution<T>> {
    let k = reciprocal_k(eps)?;
    if grid.n() < 8 * k {
        return Err(Error::Validation(format!(
            "grid with {} points per axis cannot resolve the fast scale of eps = 1/{k} (needs {})",
            grid.n(),
            8 * k
        )));
    }
    if grid.dim() != problem.dim() {
        return Err(Error::GridMismatch("problem and grid dimensions differ".into()));
    }
    let n = grid.n();
    let g = gcd(n, k % n);
    let period = n / g;
    // distinct fast-variable values per axis: residues of i*k mod n
    let axis_ys: Vec<T> = (0..period)
        .map(|m| cast::<T>((m * g) as f64) / cast::<T>(n as f64))
        .collect();
    let dim = grid.dim();
    let ys: Vec<Vec<T>> = match dim {
        1 => axis_ys.iter().map(|&v| vec![v]).collect(),
        _ => {
            let mut out = Vec::with_capacity(period * period);
            for &a in &axis_ys {
                for &b in &axis_ys {
                    out.push(vec![a, b]);
                }
            }
            out
        }
    };
    let y_index_of = |flat: usize| -> usize {
        let mi = grid.multi_index(flat);
        let mut idx = 0usize;
        for a in 0..dim {
            idx = idx * period + (mi[a] * k % n) / g;
        }
        idx
    };
    let stencils = build_stencil_set(problem.kernel(), grid, &ys, build)?;

    let n_total = grid.len();
    let nc = problem.n_controls();
    let refs: Vec<&NonlocalStencil<T>> = (0..n_total)
        .flat_map(|i| (0..nc).map(move |t| (i, t)))
        .map(|(i, t)| stencils.stencil(y_index_of(i), t))
        .collect();
    let mut costs = Vec::with_capacity(n_total * nc);
    let mut drift = Vec::with_capacity(n_total * nc * dim);
    for i in 0..n_total {
        let x = grid.point::<T>(i);
        let y = &ys[y_index_of(i)];
        for t in 0..nc {
            costs.push(problem.cost(&x, y, t));
            let f = problem.drift(&x, y, t);
            drift.extend_from_slice(&f);
        }
    }
    let outcome = howard_solve(grid, nc, T::one(), &refs, Some(&drift), &costs, opts)?;
    let sol = EpsSolution {
        u: GridFunction::new(*grid, outcome.w)?,
        eps_k: k,
        residual: outcome.residual,
        iterations: outcome.iterations,
        policy: outcome.policy,
    };
    Ok(sol)
}

/// Validates that `eps` is the reciprocal of a positive integer.
pub fn reciprocal_k<T: Real>(eps: T) -> Result<usize> {
    let e = to_f64(eps);
    if !(e > 0.0 && e <= 1.0) {
        return Err(Error::Validation(format!("eps must lie in (0, 1], got {e}")));
    }
    let k = (1.0 / e).round();
    if ((1.0 / e) - k).abs() > 1e-9 * k {
        return Err(Error::Validation(format!(
            "eps must be the reciprocal of an integer, got {e}"
        )));
    }
    Ok(k as usize)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    if b == 0 {
        return a;
    }
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

// ---------------------------------------------------------------------------
// Howard core
// ---------------------------------------------------------------------------

pub(crate) struct HowardOutcome<T: Real> {
    pub w: Vec<T>,
    pub residual: T,
    pub iterations: usize,
    pub policy: Vec<usize>,
}

/// Policy-iteration solver for
/// `zeroth * w + max_theta { -L^theta w - f^theta . D_up w - l^theta } = 0`.
///
/// `stencils` is `[row * n_controls + theta]`; `drift`, when present, is
/// `[row * n_controls * dim + theta * dim + axis]`; `costs` is
/// `[row * n_controls + theta]`. Each frozen policy yields a strictly
/// diagonally dominant M-matrix; the diagonal is assembled as `zeroth` minus
/// the accumulated off-diagonal row so constants are in the kernel of the
/// discrete generator to the last bit, and the solve shifts out the cost
/// mean so residuals reach the round-off floor even at tiny discounts.
pub(crate) fn howard_solve<T: Real>(
    grid: &TorusGrid,
    n_controls: usize,
    zeroth: T,
    stencils: &[&NonlocalStencil<T>],
    drift: Option<&[T]>,
    costs: &[T],
    opts: &HowardOptions<T>,
) -> Result<HowardOutcome<T>> {
    let n = grid.len();
    let dim = grid.dim();
    let h = grid.spacing::<T>();
    if stencils.len() != n * n_controls || costs.len() != n * n_controls {
        return Err(Error::Internal("howard input shape mismatch".into()));
    }
    let mut policy = match &opts.initial_policy {
        Some(p) => {
            if p.len() != n || p.iter().any(|&t| t >= n_controls) {
                return Err(Error::Validation("initial policy shape is invalid".into()));
            }
            p.clone()
        }
        None => vec![0usize; n],
    };

    let drift_at = |row: usize, theta: usize| -> Option<&[T]> {
        drift.map(|d| {
            let base = (row * n_controls + theta) * dim;
            &d[base..base + dim]
        })
    };

    let q_value = |w: &[T], row: usize, theta: usize| -> T {
        let mut q = -stencils[row * n_controls + theta].apply_values(w, row);
        if let Some(f) = drift_at(row, theta) {
            for (axis, &v) in f.iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                let mut off = [0isize; 2];
                off[axis] = if v > T::zero() { 1 } else { -1 };
                let neighbor = w[grid.shift(row, &off[..dim])];
                let dwn = if v > T::zero() {
                    (neighbor - w[row]) / h
                } else {
                    (w[row] - neighbor) / h
                };
                q -= v * dwn;
            }
        }
        q - costs[row * n_controls + theta]
    };

    let mut w = vec![T::zero(); n];
    let mut matrix = DenseMatrix::<T>::zeros(n);
    for it in 1..=opts.max_iterations {
        // assemble the frozen-policy system
        for v in 0..n {
            for u in 0..n {
                matrix.set(v, u, T::zero());
            }
        }
        let mut rhs = vec![T::zero(); n];
        for row in 0..n {
            let theta = policy[row];
            stencils[row * n_controls + theta].for_each_coupling(row, |j, wgt| {
                matrix.add(row, j, -wgt);
            });
            if let Some(f) = drift_at(row, theta) {
                for (axis, &v) in f.iter().enumerate() {
                    if v == T::zero() {
                        continue;
                    }
                    let mut off = [0isize; 2];
                    off[axis] = if v > T::zero() { 1 } else { -1 };
                    let j = grid.shift(row, &off[..dim]);
                    matrix.add(row, j, -v.abs() / h);
                }
            }
            let mut offsum = T::zero();
            for j in 0..n {
                if j != row {
                    offsum += matrix.get(row, j);
                }
            }
            matrix.set(row, row, zeroth - offsum);
            rhs[row] = costs[row * n_controls + theta];
        }
        let (vt, s) = solve_split(&matrix, &rhs, zeroth)?;
        for (wi, vi) in w.iter_mut().zip(vt.iter()) {
            *wi = *vi + s;
        }

        // improvement step and residual on the zero-mean deviation: the
        // Bellman operator is shift-equivariant, and keeping the constant
        // (which grows like 1/zeroth) out of the differences avoids
        // cancellation at tiny discounts
        let const_term = zeroth * s;
        let mut residual = T::zero();
        let mut new_policy = vec![0usize; n];
        for row in 0..n {
            let mut best = q_value(&vt, row, 0);
            let mut best_theta = 0usize;
            for theta in 1..n_controls {
                let q = q_value(&vt, row, theta);
                if q > best {
                    best = q;
                    best_theta = theta;
                }
            }
            new_policy[row] = best_theta;
            residual = residual.max((zeroth * vt[row] + const_term + best).abs());
        }
        if residual <= opts.tol {
            return Ok(HowardOutcome {
                w,
                residual,
                iterations: it,
                policy: new_policy,
            });
        }
        if new_policy == policy {
            // the frozen-policy solve is exact; a stable policy with residual
            // above tol means tol is below the round-off floor
            return Err(Error::IterationCap {
                cap: it,
                residual: to_f64(residual),
            });
        }
        policy = new_policy;
    }
    Err(Error::IterationCap {
        cap: opts.max_iterations,
        residual: f64::NAN,
    })
}
