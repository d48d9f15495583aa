//! Cell problem, effective Hamiltonian and the effective equation.
//!
//! The ergodic constant comes from the vanishing-discount ladder: each rung
//! solves the discounted cell problem, and the values `lambda w_lambda(y0)`
//! extrapolate linearly to `lambda = 0`. The corrector is the bottom-rung
//! solution normalized at the origin. The effective equation is solved by
//! policy iteration over occupational measures: each sweep freezes, per slow
//! grid point, the stationary measure of the bottom-rung optimal policy,
//! averages kernel, drift and cost against it, and solves the resulting
//! monotone linear system.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, TorusGrid};
use crate::hjb::{freeze_costs, ControlProblem, CostTable, HowardOptions};
use crate::linalg::{solve_refined, DenseMatrix};
use crate::nonlocal::{build_stencil_set, BuildOptions, NonlocalStencil, StencilSet};
use crate::scalar::{cast, to_f64, Real};

/// Outcome of the vanishing-discount approximation of the cell problem.
#[derive(Debug, Clone)]
pub struct ErgodicResult<T: Real> {
    /// Ergodic constant (the effective Hamiltonian value).
    pub c: T,
    /// Bottom-rung solution normalized to vanish at the origin grid point.
    pub corrector: GridFunction<T>,
    /// Smallest discount in the ladder.
    pub lambda_used: T,
    /// Difference between the two smallest-rung extrapolation estimates.
    pub error_estimate: T,
    /// Optimal policy at the bottom rung.
    pub policy: Vec<usize>,
    /// `(lambda, lambda * w_lambda(y0))` per rung, for diagnostics.
    pub rung_values: Vec<(T, T)>,
    /// Bottom-rung solution before normalization.
    pub w_lambda: GridFunction<T>,
}

/// Linear (first-order-in-lambda) extrapolation of the vanishing-discount
/// values `v_i = lambda_i w_{lambda_i}(y0)` to `lambda = 0`.
///
/// Returns `(c, error_estimate)` with `c = -v(0)`. Errors if the residuals
/// `|v_i + c|` fail to decrease along the ladder beyond a small floor, which
/// signals that discretization error dominates the ladder.
pub fn extrapolate_vanishing_discount<T: Real>(pairs: &[(T, T)]) -> Result<(T, T)> {
    if pairs.len() < 3 {
        return Err(Error::Validation(
            "discount ladder needs at least 3 rungs".into(),
        ));
    }
    for w in pairs.windows(2) {
        if !(w[1].0 < w[0].0) || w[1].0 <= T::zero() {
            return Err(Error::Validation(
                "discount ladder must be strictly decreasing and positive".into(),
            ));
        }
    }
    let zero_intercept = |a: (T, T), b: (T, T)| -> T {
        (a.0 * b.1 - b.0 * a.1) / (a.0 - b.0)
    };
    let m = pairs.len();
    let last = zero_intercept(pairs[m - 2], pairs[m - 1]);
    let prev = zero_intercept(pairs[m - 3], pairs[m - 2]);
    let c = -last;
    let floor = cast::<T>(1e-7) * (T::one() + c.abs());
    let residuals: Vec<T> = pairs.iter().map(|&(_, v)| (v - last).abs()).collect();
    for w in residuals.windows(2) {
        if w[1] > w[0] * cast::<T>(1.25) + floor {
            return Err(Error::ExtrapolationNonMonotone {
                prev: to_f64(w[0]),
                next: to_f64(w[1]),
            });
        }
    }
    Ok((c, (last - prev).abs()))
}

/// Solves the cell problem for a frozen running cost by the vanishing
/// discount: one discounted solve per ladder rung, linear extrapolation of
/// `-lambda w_lambda(y0)`, corrector from the bottom rung.
pub fn ergodic_constant<T: Real>(
    costs: &CostTable<T>,
    stencils: &StencilSet<T>,
    ladder: &[T],
    opts: &HowardOptions<T>,
) -> Result<ErgodicResult<T>> {
    if ladder.len() < 3 {
        return Err(Error::Validation(
            "discount ladder needs at least 3 rungs".into(),
        ));
    }
    let mut rung_values = Vec::with_capacity(ladder.len());
    let mut policy = opts.initial_policy.clone();
    let mut bottom = None;
    for &lambda in ladder {
        let rung_opts = HowardOptions {
            initial_policy: policy.clone(),
            ..opts.clone()
        };
        let sol = crate::hjb::solve_discounted(costs, stencils, lambda, &rung_opts)?;
        rung_values.push((lambda, lambda * sol.w.get(0)));
        policy = Some(sol.policy.clone());
        bottom = Some(sol);
    }
    let bottom = bottom.expect("ladder is nonempty");
    let (c, error_estimate) = extrapolate_vanishing_discount(&rung_values)?;
    let w0 = bottom.w.get(0);
    let corrector = GridFunction::new(
        bottom.w.grid(),
        bottom.w.values().iter().map(|&v| v - w0).collect(),
    )?;
    Ok(ErgodicResult {
        c,
        corrector,
        lambda_used: bottom.lambda,
        error_estimate,
        policy: bottom.policy,
        rung_values,
        w_lambda: bottom.w,
    })
}

/// Stationary distribution of the generator frozen at a policy: solves
/// `G' pi = 0`, `sum pi = 1`. The kernel sandwich makes every state reachable,
/// so the distribution is unique and strictly positive.
pub fn stationary_measure<T: Real>(
    stencils: &StencilSet<T>,
    policy: &[usize],
) -> Result<Vec<T>> {
    let grid = stencils.grid();
    let n = grid.len();
    if policy.len() != n || stencils.n_ys() != n {
        return Err(Error::GridMismatch(
            "stationary measure needs one stencil and one policy entry per grid point".into(),
        ));
    }
    // assemble the transpose of the generator
    let mut at = DenseMatrix::<T>::zeros(n);
    for j in 0..n {
        let s = stencils.stencil(j, policy[j]);
        let mut row_sum = T::zero();
        s.for_each_coupling(j, |col, w| {
            at.add(col, j, w);
            row_sum += w;
        });
        at.add(j, j, -row_sum);
    }
    // replace the first balance equation by the normalization
    for j in 0..n {
        at.set(0, j, T::one());
    }
    let mut rhs = vec![T::zero(); n];
    rhs[0] = T::one();
    let mut pi = solve_refined(&at, &rhs)?;
    let mut total = T::zero();
    for v in pi.iter_mut() {
        if *v < T::zero() {
            if *v < cast(-1e-9) {
                return Err(Error::Internal(format!(
                    "stationary measure has a negative mass {}",
                    to_f64(*v)
                )));
            }
            *v = T::zero();
        }
        total += *v;
    }
    for v in pi.iter_mut() {
        *v /= total;
    }
    Ok(pi)
}

/// One evaluation of the effective Hamiltonian.
#[derive(Debug, Clone)]
pub struct EffectiveSample<T: Real> {
    pub x: Vec<T>,
    pub p: Vec<T>,
    pub value: T,
    pub error_estimate: T,
}

/// Effective Hamiltonian at `(x, p, phi)`: freezes the cell running cost
/// `l^theta(y) = L^theta_y phi(x) + f^theta(x,y).p + l^theta(x,y)` and returns
/// the ergodic constant. The stencil set must live on `phi`'s grid with one
/// frozen `y` per grid point (slow and fast grids coincide here).
pub fn effective_hamiltonian<T: Real>(
    problem: &ControlProblem<T>,
    stencils: &StencilSet<T>,
    x_index: usize,
    p: &[T],
    phi: &GridFunction<T>,
    ladder: &[T],
    opts: &HowardOptions<T>,
) -> Result<(EffectiveSample<T>, ErgodicResult<T>)> {
    let costs = freeze_costs(problem, stencils, x_index, p, phi)?;
    let ergodic = ergodic_constant(&costs, stencils, ladder, opts)?;
    let sample = EffectiveSample {
        x: phi.grid().point::<T>(x_index),
        p: p.to_vec(),
        value: ergodic.c,
        error_estimate: ergodic.error_estimate,
    };
    Ok((sample, ergodic))
}

/// Knobs for the effective-equation solver.
#[derive(Debug, Clone)]
pub struct EffectiveOptions<T: Real> {
    /// Target sup residual of the effective equation.
    pub tol: T,
    pub max_sweeps: usize,
    /// Relaxation factor on the sweep update, in `(0, 1]`.
    pub damping: T,
    pub howard: HowardOptions<T>,
    pub build: BuildOptions<T>,
}

impl<T: Real> Default for EffectiveOptions<T> {
    fn default() -> Self {
        Self {
            tol: cast(1e-6),
            max_sweeps: 80,
            damping: T::one(),
            howard: HowardOptions::default(),
            build: BuildOptions::default(),
        }
    }
}

/// Solution of the effective problem.
#[derive(Debug, Clone)]
pub struct EffectiveSolution<T: Real> {
    pub u: GridFunction<T>,
    /// Sup residual `|u + Hbar(x, Du, u)|` with the upwind gradient the
    /// scheme solves with.
    pub residual: T,
    /// Same residual evaluated with centered differences (diagnostic only).
    pub centered_residual: T,
    pub sweeps: usize,
    /// Final effective-Hamiltonian values per grid point.
    pub hbar: Vec<T>,
}

struct RowFreeze<T: Real> {
    hbar: T,
    avg: NonlocalStencil<T>,
    fbar: Vec<T>,
    lbar: T,
    policy: Vec<usize>,
}

/// Solves `u(x) + Hbar(x, Du(x), u) = 0` on the torus grid.
///
/// Each sweep evaluates the effective Hamiltonian at every grid point
/// (through the discount ladder), takes the stationary measure of the
/// attained policy, and solves the measure-frozen monotone system with
/// upwind drift. Sweeps stop when the fresh-Hamiltonian residual falls under
/// `tol`; a centered-difference residual is reported as a diagnostic.
pub fn solve_effective<T: Real>(
    problem: &ControlProblem<T>,
    grid: &TorusGrid,
    ladder: &[T],
    opts: &EffectiveOptions<T>,
) -> Result<EffectiveSolution<T>> {
    if grid.dim() != problem.dim() {
        return Err(Error::GridMismatch("problem and grid dimensions differ".into()));
    }
    if !(opts.damping > T::zero() && opts.damping <= T::one()) {
        return Err(Error::Validation("damping must lie in (0, 1]".into()));
    }
    let n = grid.len();
    let dim = grid.dim();
    let h = grid.spacing::<T>();
    let ys: Vec<Vec<T>> = (0..n).map(|j| grid.point::<T>(j)).collect();
    let stencils = build_stencil_set(problem.kernel(), grid, &ys, &opts.build)?;

    let mut u = GridFunction::zeros(*grid);
    let mut warm: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut fbar_prev: Option<Vec<Vec<T>>> = None;

    let mut last_residual = T::infinity();
    for sweep in 1..=opts.max_sweeps {
        let freeze_row = |i: usize| -> Result<RowFreeze<T>> {
            // gradient for the frozen cost: upwind against the previous
            // averaged drift once one exists, centered on the first sweep
            let p: Vec<T> = (0..dim)
                .map(|axis| match &fbar_prev {
                    Some(fb) => {
                        let v = fb[i][axis];
                        if v == T::zero() {
                            u.centered_difference(i, axis)
                        } else {
                            u.one_sided_difference(i, axis, v > T::zero())
                        }
                    }
                    None => u.centered_difference(i, axis),
                })
                .collect();
            let row_opts = HowardOptions {
                initial_policy: warm[i].clone(),
                ..opts.howard.clone()
            };
            let costs = freeze_costs(problem, &stencils, i, &p, &u)?;
            let ergodic = ergodic_constant(&costs, &stencils, ladder, &row_opts)?;
            let pi = stationary_measure(&stencils, &ergodic.policy)?;
            let parts: Vec<(T, &NonlocalStencil<T>)> = (0..n)
                .map(|j| (pi[j], stencils.stencil(j, ergodic.policy[j])))
                .collect();
            let avg = NonlocalStencil::weighted_combination(&parts)?;
            let x = grid.point::<T>(i);
            let mut fbar = vec![T::zero(); dim];
            let mut lbar = T::zero();
            for j in 0..n {
                let f = problem.drift(&x, &ys[j], ergodic.policy[j]);
                for a in 0..dim {
                    fbar[a] += pi[j] * f[a];
                }
                lbar += pi[j] * problem.cost(&x, &ys[j], ergodic.policy[j]);
            }
            Ok(RowFreeze {
                hbar: ergodic.c,
                avg,
                fbar,
                lbar,
                policy: ergodic.policy,
            })
        };
        let rows: Vec<RowFreeze<T>> = (0..n)
            .into_par_iter()
            .map(freeze_row)
            .collect::<Result<Vec<_>>>()?;

        let residual = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (u.get(i) + r.hbar).abs())
            .fold(T::zero(), |a, b| a.max(b));
        last_residual = residual;
        for (i, r) in rows.iter().enumerate() {
            warm[i] = Some(r.policy.clone());
        }
        if residual <= opts.tol {
            let centered = centered_residual(problem, &stencils, &u, ladder, opts, &warm)?;
            return Ok(EffectiveSolution {
                hbar: rows.iter().map(|r| r.hbar).collect(),
                u,
                residual,
                centered_residual: centered,
                sweeps: sweep,
            });
        }

        // measure-frozen monotone system: (I - Lbar - fbar . D_up) u = lbar
        let mut matrix = DenseMatrix::<T>::zeros(n);
        let mut rhs = vec![T::zero(); n];
        for (i, r) in rows.iter().enumerate() {
            r.avg.for_each_coupling(i, |j, w| matrix.add(i, j, -w));
            for (axis, &v) in r.fbar.iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                let mut off = [0isize; 2];
                off[axis] = if v > T::zero() { 1 } else { -1 };
                let j = grid.shift(i, &off[..dim]);
                matrix.add(i, j, -v.abs() / h);
            }
            let mut offsum = T::zero();
            for j in 0..n {
                if j != i {
                    offsum += matrix.get(i, j);
                }
            }
            matrix.set(i, i, T::one() - offsum);
            rhs[i] = r.lbar;
        }
        let mean: T = rhs.iter().copied().sum::<T>() / cast::<T>(n as f64);
        for v in rhs.iter_mut() {
            *v -= mean;
        }
        let solved = solve_refined(&matrix, &rhs)?;
        let rho = opts.damping;
        for (i, v) in solved.iter().enumerate() {
            let target = *v + mean;
            let current = u.get(i);
            u.values_mut()[i] = (T::one() - rho) * current + rho * target;
        }
        fbar_prev = Some(rows.iter().map(|r| r.fbar.clone()).collect());
    }
    Err(Error::IterationCap {
        cap: opts.max_sweeps,
        residual: to_f64(last_residual),
    })
}

/// Residual of the effective equation at `u` with centered-difference
/// gradients, reported as a smoothness diagnostic.
fn centered_residual<T: Real>(
    problem: &ControlProblem<T>,
    stencils: &StencilSet<T>,
    u: &GridFunction<T>,
    ladder: &[T],
    opts: &EffectiveOptions<T>,
    warm: &[Option<Vec<usize>>],
) -> Result<T> {
    let grid = u.grid();
    let dim = grid.dim();
    let vals: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<T> {
            let p: Vec<T> = (0..dim).map(|a| u.centered_difference(i, a)).collect();
            let row_opts = HowardOptions {
                initial_policy: warm[i].clone(),
                ..opts.howard.clone()
            };
            let costs = freeze_costs(problem, stencils, i, &p, u)?;
            let ergodic = ergodic_constant(&costs, stencils, ladder, &row_opts)?;
            Ok((u.get(i) + ergodic.c).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(T::zero(), |a, b| a.max(b)))
}
