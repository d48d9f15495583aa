//! Occupational-measure route to the ergodic constant.
//!
//! The discrete stationarity constraints `sum_{j,theta} mu (L^theta e_i)(y_j)
//! = 0` over all grid basis functions cut the probability simplex down to the
//! feasible occupational measures; minimizing the frozen running cost over
//! that polytope reproduces the ergodic constant with the opposite sign.
//! This is the computational counterpart of the representation formula and
//! cross-checks the vanishing-discount route end to end.

use crate::cell::{ergodic_constant, ErgodicResult};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::hjb::{ControlProblem, CostTable, HowardOptions};
use crate::nonlocal::{NonlocalStencil, StencilSet};
use crate::scalar::{cast, to_f64, Real};
use crate::simplex::{solve_lp, LinearProgram};

/// Probability weights on `(fast grid point, control)` pairs.
#[derive(Debug, Clone)]
pub struct OccupationalMeasure<T: Real> {
    n_y: usize,
    n_controls: usize,
    weights: Vec<T>,
}

impl<T: Real> OccupationalMeasure<T> {
    pub fn new(n_y: usize, n_controls: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != n_y * n_controls {
            return Err(Error::Validation("measure weight shape mismatch".into()));
        }
        let mut total = T::zero();
        for &w in &weights {
            if w < cast(-1e-12) {
                return Err(Error::Validation(format!(
                    "measure has negative weight {}",
                    to_f64(w)
                )));
            }
            total += w;
        }
        if (total - T::one()).abs() > cast(1e-12) {
            return Err(Error::Validation(format!(
                "measure weights sum to {}, expected 1",
                to_f64(total)
            )));
        }
        Ok(Self {
            n_y,
            n_controls,
            weights,
        })
    }

    pub fn point_mass(n_y: usize, n_controls: usize, j: usize, theta: usize) -> Self {
        let mut weights = vec![T::zero(); n_y * n_controls];
        weights[j * n_controls + theta] = T::one();
        Self {
            n_y,
            n_controls,
            weights,
        }
    }

    /// Product of a distribution over the fast grid with a fixed policy.
    pub fn from_policy(pi: &[T], policy: &[usize], n_controls: usize) -> Result<Self> {
        if pi.len() != policy.len() {
            return Err(Error::Validation("policy and distribution lengths differ".into()));
        }
        let n_y = pi.len();
        let mut weights = vec![T::zero(); n_y * n_controls];
        for (j, (&mass, &theta)) in pi.iter().zip(policy.iter()).enumerate() {
            weights[j * n_controls + theta] = mass;
        }
        Self::new(n_y, n_controls, weights)
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
        self.weights[j * self.n_controls + theta]
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Integral of a cost table against the measure.
    pub fn integrate(&self, costs: &CostTable<T>) -> T {
        self.weights
            .iter()
            .zip(costs.values().iter())
            .map(|(&w, &c)| w * c)
            .sum()
    }
}

/// Hard cap on LP sizes; dense tableaus stay comfortable below it.
const MAX_LP_VARS: usize = 512;

fn stationarity_program<T: Real>(
    costs: &CostTable<T>,
    stencils: &StencilSet<T>,
) -> Result<LinearProgram<T>> {
    let grid = stencils.grid();
    let n = grid.len();
    let nc = stencils.n_controls();
    if stencils.n_ys() != n || costs.n_y() != n || costs.n_controls() != nc {
        return Err(Error::GridMismatch(
            "LP needs one stencil and one cost row per grid point".into(),
        ));
    }
    let n_vars = n * nc;
    if n_vars > MAX_LP_VARS {
        return Err(Error::Validation(format!(
            "LP size {n_vars} exceeds the {MAX_LP_VARS}-variable cap"
        )));
    }
    // rows 0..n-1: stationarity against basis functions e_0..e_{n-2} (the
    // last one is the negative sum of the others since constants are
    // annihilated exactly); final row: total mass.
    let n_rows = n;
    let mut constraints = vec![T::zero(); n_rows * n_vars];
    for j in 0..n {
        for theta in 0..nc {
            let col = j * nc + theta;
            let s = stencils.stencil(j, theta);
            let mut row_sum = T::zero();
            s.for_each_coupling(j, |i, w| {
                if i < n - 1 {
                    constraints[i * n_vars + col] += w;
                }
                row_sum += w;
            });
            if j < n - 1 {
                constraints[j * n_vars + col] -= row_sum;
            }
            constraints[(n_rows - 1) * n_vars + col] = T::one();
        }
    }
    let mut rhs = vec![T::zero(); n_rows];
    rhs[n_rows - 1] = T::one();
    Ok(LinearProgram {
        n_vars,
        constraints,
        rhs,
        objective: costs.values().to_vec(),
    })
}

/// Ergodic constant as a linear program over occupational measures:
/// `c = -(min over feasible mu of the mu-average of the frozen cost)`,
/// together with an optimizer.
pub fn lp_ergodic_constant<T: Real>(
    costs: &CostTable<T>,
    stencils: &StencilSet<T>,
) -> Result<(T, OccupationalMeasure<T>)> {
    let lp = stationarity_program(costs, stencils)?;
    let sol = solve_lp(&lp).map_err(|e| match e {
        // a feasible point always exists (any policy's stationary measure)
        Error::LpInfeasible => {
            Error::Internal("stationarity LP reported infeasible".into())
        }
        Error::LpUnbounded => Error::Internal("stationarity LP reported unbounded".into()),
        other => other,
    })?;
    // clean round-off before the strict measure validation
    let mut weights = sol.x;
    let mut total = T::zero();
    for w in weights.iter_mut() {
        if *w < T::zero() && *w > cast(-1e-11) {
            *w = T::zero();
        }
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    let mu = OccupationalMeasure::new(costs.n_y(), costs.n_controls(), weights)?;
    Ok((-sol.value, mu))
}

/// Feasibility certificate: sampling any policy's stationary distribution
/// gives an LP-feasible occupational measure.
pub fn policy_measure<T: Real>(
    stencils: &StencilSet<T>,
    policy: &[usize],
) -> Result<OccupationalMeasure<T>> {
    let pi = crate::cell::stationary_measure(stencils, policy)?;
    OccupationalMeasure::from_policy(&pi, policy, stencils.n_controls())
}

/// Kernel, drift and cost averaged against an occupational measure at a slow
/// point `x`.
#[derive(Debug, Clone)]
pub struct AveragedIngredients<T: Real> {
    pub x: Vec<T>,
    pub k_bar: NonlocalStencil<T>,
    pub f_bar: Vec<T>,
    pub l_bar: T,
}

pub fn averaged_ingredients<T: Real>(
    problem: &ControlProblem<T>,
    stencils: &StencilSet<T>,
    mu: &OccupationalMeasure<T>,
    x: &[T],
) -> Result<AveragedIngredients<T>> {
    if mu.n_y() != stencils.n_ys() || mu.n_controls() != stencils.n_controls() {
        return Err(Error::GridMismatch(
            "measure does not match the stencil set layout".into(),
        ));
    }
    let parts: Vec<(T, &NonlocalStencil<T>)> = (0..mu.n_y())
        .flat_map(|j| (0..mu.n_controls()).map(move |t| (j, t)))
        .map(|(j, t)| (mu.get(j, t), stencils.stencil(j, t)))
        .collect();
    let k_bar = NonlocalStencil::weighted_combination(&parts)?;
    let dim = problem.dim();
    let mut f_bar = vec![T::zero(); dim];
    let mut l_bar = T::zero();
    for (j, y) in stencils.ys().iter().enumerate() {
        for theta in 0..mu.n_controls() {
            let w = mu.get(j, theta);
            if w == T::zero() {
                continue;
            }
            let f = problem.drift(x, y, theta);
            for a in 0..dim {
                f_bar[a] += w * f[a];
            }
            l_bar += w * problem.cost(x, y, theta);
        }
    }
    Ok(AveragedIngredients {
        x: x.to_vec(),
        k_bar,
        f_bar,
        l_bar,
    })
}

/// Membership in the cone of cost families that admit a subsolution:
/// `phi` belongs iff the ergodic constant of
/// `sup_theta { -L^theta u - phi_theta }` is nonpositive.
#[derive(Debug, Clone)]
pub struct ConeMembership<T: Real> {
    pub member: bool,
    /// `-c_phi`; positive inside the cone.
    pub margin: T,
    pub ergodic: ErgodicResult<T>,
}

pub fn cone_membership<T: Real>(
    phi: &CostTable<T>,
    stencils: &StencilSet<T>,
    ladder: &[T],
    opts: &HowardOptions<T>,
) -> Result<ConeMembership<T>> {
    let ergodic = ergodic_constant(phi, stencils, ladder, opts)?;
    Ok(ConeMembership {
        member: ergodic.c <= cast(1e-12),
        margin: -ergodic.c,
        ergodic,
    })
}

/// Primal-dual gap report for the two ergodic characterizations.
#[derive(Debug, Clone)]
pub struct MinimaxGapReport<T: Real> {
    /// `min over feasible mu of the mu-average cost` (the LP optimum).
    pub lp_value: T,
    /// `sup over the span of the samples of the vertex-measure infimum`.
    pub dual_value: T,
    /// `lp_value - dual_value`; nonnegative up to arithmetic.
    pub gap: T,
}

/// Computes the duality gap between the occupational-measure program and the
/// test-function characterization restricted to `span(psi_samples)`. The gap
/// is nonnegative by weak duality and shrinks to round-off once the samples
/// span the grid.
pub fn minimax_gap<T: Real>(
    costs: &CostTable<T>,
    stencils: &StencilSet<T>,
    psi_samples: &[GridFunction<T>],
) -> Result<MinimaxGapReport<T>> {
    let (c_lp, _) = lp_ergodic_constant(costs, stencils)?;
    let lp_value = -c_lp;

    let grid = stencils.grid();
    let n = grid.len();
    let nc = stencils.n_controls();
    if psi_samples.is_empty() {
        return Err(Error::Validation("minimax gap needs at least one sample".into()));
    }
    for psi in psi_samples {
        if psi.grid() != grid {
            return Err(Error::GridMismatch("psi sample on a foreign grid".into()));
        }
    }
    let s_count = psi_samples.len();
    // l_psi[(j, theta)][m] = (L^theta psi_m)(y_j)
    let mut l_psi = vec![T::zero(); n * nc * s_count];
    for j in 0..n {
        for theta in 0..nc {
            for (m, psi) in psi_samples.iter().enumerate() {
                l_psi[(j * nc + theta) * s_count + m] =
                    stencils.stencil(j, theta).apply_values(psi.values(), j);
            }
        }
    }
    // maximize s subject to s <= l(j,theta) + sum_m a_m (L psi_m)(j, theta),
    // free s and a: split into nonnegative parts and add one slack per row.
    let rows = n * nc;
    let free = 2 + 2 * s_count;
    let n_vars = free + rows;
    if n_vars + rows > 4 * MAX_LP_VARS {
        return Err(Error::Validation("minimax program too large".into()));
    }
    let mut constraints = vec![T::zero(); rows * n_vars];
    let mut rhs = vec![T::zero(); rows];
    for j in 0..n {
        for theta in 0..nc {
            let r = j * nc + theta;
            let base = r * n_vars;
            constraints[base] = T::one(); // s+
            constraints[base + 1] = -T::one(); // s-
            for m in 0..s_count {
                let v = l_psi[r * s_count + m];
                constraints[base + 2 + 2 * m] = -v; // a_m+
                constraints[base + 2 + 2 * m + 1] = v; // a_m-
            }
            constraints[base + free + r] = T::one(); // slack
            rhs[r] = costs.get(j, theta);
        }
    }
    let mut objective = vec![T::zero(); n_vars];
    objective[0] = -T::one();
    objective[1] = T::one();
    let lp = LinearProgram {
        n_vars,
        constraints,
        rhs,
        objective,
    };
    let sol = solve_lp(&lp)?;
    let dual_value = -sol.value;
    Ok(MinimaxGapReport {
        lp_value,
        dual_value,
        gap: lp_value - dual_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::kernels::KernelSpec;
    use crate::nonlocal::{build_stencil_set, BuildOptions};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn grid_ys(grid: &TorusGrid) -> Vec<Vec<f64>> {
        (0..grid.len()).map(|j| grid.point::<f64>(j)).collect()
    }

    fn iso_set(n: usize, a: f64, nc: usize) -> StencilSet<f64> {
        let spec = KernelSpec::isotropic(1, 1.5, a, nc).unwrap();
        let grid = TorusGrid::new(1, n).unwrap();
        build_stencil_set(&spec, &grid, &grid_ys(&grid), &BuildOptions::default()).unwrap()
    }

    fn y_varying_set(n: usize, nc: usize) -> StencilSet<f64> {
        let map = Arc::new(move |y: &[f64], _z: &[f64], t: usize| {
            vec![3.0 * (1.0 + 0.3 * (std::f64::consts::TAU * y[0] + 0.7 * t as f64).cos())]
        });
        let e = (1.0 + 1.5) / 2.0;
        let spec = KernelSpec::new(
            1,
            1.5,
            crate::kernels::Anisotropy::Map(map),
            (3.0f64 * 1.3).powf(-e),
            (3.0f64 * 0.7).powf(-e),
            1.0,
            nc,
        )
        .unwrap();
        let grid = TorusGrid::new(1, n).unwrap();
        build_stencil_set(&spec, &grid, &grid_ys(&grid), &BuildOptions::default()).unwrap()
    }

    #[test]
    fn uniform_measure_and_mean_cost_for_circulant_generators() {
        let n = 16;
        let set = iso_set(n, 1.0, 1);
        let costs = CostTable::from_fn(n, 1, |j, _| {
            0.4 + 0.6 * (std::f64::consts::TAU * j as f64 / n as f64).cos()
        });
        let (c, mu) = lp_ergodic_constant(&costs, &set).unwrap();
        assert!((c + 0.4).abs() <= 1e-9, "c = {c}");
        for j in 0..n {
            assert_relative_eq!(mu.get(j, 0), 1.0 / n as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_costs_select_the_cheapest_control() {
        let n = 12;
        let set = iso_set(n, 1.0, 3);
        let costs = CostTable::from_fn(n, 3, |_, t| [0.9, 0.3, 0.6][t]);
        let (c, mu) = lp_ergodic_constant(&costs, &set).unwrap();
        assert_relative_eq!(c, -0.3, epsilon = 1e-10);
        let mass_on_best: f64 = (0..n).map(|j| mu.get(j, 1)).sum();
        assert_relative_eq!(mass_on_best, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lp_and_discount_routes_agree() {
        let n = 16;
        let set = y_varying_set(n, 2);
        let costs = CostTable::from_fn(n, 2, |j, t| {
            let y = j as f64 / n as f64;
            if t == 0 {
                0.5 + (std::f64::consts::TAU * y).cos()
            } else {
                0.7 - 0.8 * (std::f64::consts::TAU * y).sin()
            }
        });
        let (c_lp, mu) = lp_ergodic_constant(&costs, &set).unwrap();
        let ladder = vec![1e-2, 1e-3, 1e-4, 1e-5];
        let erg = ergodic_constant(&costs, &set, &ladder, &HowardOptions::default()).unwrap();
        assert!(
            (c_lp - erg.c).abs() <= 1e-6,
            "LP {c_lp} vs discount {}",
            erg.c
        );
        // the optimizer integrates the cost to the optimal value
        assert_relative_eq!(mu.integrate(&costs), -c_lp, epsilon = 1e-9);
    }

    #[test]
    fn measure_validation_rejects_bad_weights() {
        assert!(OccupationalMeasure::new(2, 1, vec![0.6, 0.6]).is_err());
        assert!(OccupationalMeasure::new(2, 1, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn point_mass_average_recovers_the_frozen_data() {
        let n = 12;
        let set = y_varying_set(n, 2);
        let kernel_nc2 = KernelSpec::isotropic(1, 1.5, 1.0, 2).unwrap();
        let problem = ControlProblem::new(
            kernel_nc2,
            Arc::new(|x: &[f64], y: &[f64], t: usize| {
                vec![0.3 * (std::f64::consts::TAU * (x[0] + y[0])).sin() + 0.1 * t as f64]
            }),
            Arc::new(|x: &[f64], y: &[f64], t: usize| {
                0.5 * (std::f64::consts::TAU * y[0]).cos() + x[0] + 0.2 * t as f64
            }),
            2.0,
            3.0,
        )
        .unwrap();
        let (j0, t0) = (5usize, 1usize);
        let mu = OccupationalMeasure::point_mass(n, 2, j0, t0);
        let x = vec![0.25f64];
        let avg = averaged_ingredients(&problem, &set, &mu, &x).unwrap();
        let y0 = set.ys()[j0].clone();
        assert_relative_eq!(avg.f_bar[0], problem.drift(&x, &y0, t0)[0], epsilon = 1e-13);
        assert_relative_eq!(avg.l_bar, problem.cost(&x, &y0, t0), epsilon = 1e-13);
        for (w, expect) in avg
            .k_bar
            .offdiag_weights()
            .iter()
            .zip(set.stencil(j0, t0).offdiag_weights())
        {
            assert_relative_eq!(*w, *expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn constant_drift_averages_to_itself() {
        let n = 12;
        let set = iso_set(n, 1.0, 2);
        let kernel = KernelSpec::isotropic(1, 1.5, 1.0, 2).unwrap();
        let problem = ControlProblem::new(
            kernel,
            Arc::new(|_x: &[f64], _y: &[f64], _t: usize| vec![0.7]),
            Arc::new(|_x: &[f64], _y: &[f64], _t: usize| 0.1),
            1.0,
            1.0,
        )
        .unwrap();
        let costs = CostTable::from_fn(n, 2, |j, t| {
            0.2 * (std::f64::consts::TAU * j as f64 / n as f64).sin() + 0.1 * t as f64
        });
        let (_, mu) = lp_ergodic_constant(&costs, &set).unwrap();
        let avg = averaged_ingredients(&problem, &set, &mu, &[0.0]).unwrap();
        assert_relative_eq!(avg.f_bar[0], 0.7, epsilon = 1e-10);
    }

    #[test]
    fn cone_membership_signs_and_convexity() {
        let n = 16;
        let set = iso_set(n, 1.0, 1);
        let ladder = vec![1e-1, 1e-2, 1e-3, 1e-4];
        let opts = HowardOptions::default();

        let plus = CostTable::from_fn(n, 1, |_, _| 1.0);
        let inside = cone_membership(&plus, &set, &ladder, &opts).unwrap();
        assert!(inside.member);
        assert_relative_eq!(inside.margin, 1.0, epsilon = 1e-10);

        let minus = CostTable::from_fn(n, 1, |_, _| -1.0);
        let outside = cone_membership(&minus, &set, &ladder, &opts).unwrap();
        assert!(!outside.member);

        // positive scaling and midpoints stay inside
        let phi1 = CostTable::from_fn(n, 1, |j, _| {
            0.8 + 0.5 * (std::f64::consts::TAU * j as f64 / n as f64).cos()
        });
        let phi2 = CostTable::from_fn(n, 1, |j, _| {
            0.6 - 0.4 * (std::f64::consts::TAU * j as f64 / n as f64).sin()
        });
        assert!(cone_membership(&phi1, &set, &ladder, &opts).unwrap().member);
        assert!(cone_membership(&phi2, &set, &ladder, &opts).unwrap().member);
        let scaled = phi1.map(|v| 2.0 * v);
        assert!(cone_membership(&scaled, &set, &ladder, &opts).unwrap().member);
        let midpoint = CostTable::from_fn(n, 1, |j, t| 0.5 * (phi1.get(j, t) + phi2.get(j, t)));
        assert!(cone_membership(&midpoint, &set, &ladder, &opts).unwrap().member);
    }

    #[test]
    fn minimax_gap_vanishes_for_constant_costs() {
        let n = 12;
        let set = iso_set(n, 1.0, 1);
        let costs = CostTable::from_fn(n, 1, |_, _| 0.5);
        let grid = set.grid();
        let samples = vec![GridFunction::zeros(grid)];
        let report = minimax_gap(&costs, &set, &samples).unwrap();
        assert!(report.gap.abs() <= 1e-9, "gap {}", report.gap);
    }

    #[test]
    fn minimax_gap_closes_with_the_full_basis() {
        let n = 12;
        let set = y_varying_set(n, 2);
        let grid = set.grid();
        let costs = CostTable::from_fn(n, 2, |j, t| {
            let y = j as f64 / n as f64;
            0.4 + 0.5 * (std::f64::consts::TAU * y).cos() - 0.3 * t as f64
        });
        // weak duality on a thin span
        let thin = vec![GridFunction::from_fn(grid, |x: &[f64]| {
            (std::f64::consts::TAU * x[0]).cos()
        })];
        let r_thin = minimax_gap(&costs, &set, &thin).unwrap();
        assert!(r_thin.gap >= -1e-9);

        // full basis closes the gap
        let basis: Vec<GridFunction<f64>> = (0..n)
            .map(|i| {
                let mut g = GridFunction::zeros(grid);
                g.values_mut()[i] = 1.0;
                g
            })
            .collect();
        let r_full = minimax_gap(&costs, &set, &basis).unwrap();
        assert!(r_full.gap >= -1e-9);
        assert!(r_full.gap <= 1e-4, "gap {}", r_full.gap);
        assert!(r_full.gap <= r_thin.gap + 1e-9);
    }

    #[test]
    fn policy_measures_are_feasible_lower_bound_certificates() {
        let n = 12;
        let set = y_varying_set(n, 2);
        let costs = CostTable::from_fn(n, 2, |j, t| {
            let y = j as f64 / n as f64;
            0.5 + 0.4 * (std::f64::consts::TAU * y).cos() * (1.0 - 0.5 * t as f64)
        });
        let (c_lp, _) = lp_ergodic_constant(&costs, &set).unwrap();
        // any policy's stationary measure is feasible, so its average cost is
        // at least the LP optimum, i.e. its Bellman value is at most c
        for policy_theta in 0..2usize {
            let mu = policy_measure(&set, &vec![policy_theta; n]).unwrap();
            let avg = mu.integrate(&costs);
            assert!(
                -avg <= c_lp + 1e-9,
                "policy {policy_theta}: -avg = {} vs c = {c_lp}",
                -avg
            );
        }
    }
}
