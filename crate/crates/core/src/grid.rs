//! Uniform periodic grids on the flat torus and functions living on them.

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// Uniform grid on the unit torus with `n` points per dimension.
///
/// The period is exactly 1 in every coordinate: grid points are `j / n`,
/// `j = 0..n`, and indexing wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::Validation(format!(
                "grid dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 8 {
            return Err(Error::Validation(format!(
                "grid needs at least 8 points per dimension, got {n}"
            )));
        }
        Ok(Self { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per dimension.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing `h = 1/n`.
    #[inline]
    pub fn spacing<T: Real>(&self) -> T {
        T::one() / cast::<T>(self.n as f64)
    }

    /// Total number of grid points.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat index (row-major).
    #[inline]
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.n, flat % self.n],
        }
    }

    /// Coordinates of a grid point.
    pub fn point<T: Real>(&self, flat: usize) -> Vec<T> {
        let h = self.spacing::<T>();
        let mi = self.multi_index(flat);
        (0..self.dim).map(|a| cast::<T>(mi[a] as f64) * h).collect()
    }

    /// Flat index shifted by a (possibly negative) offset in each axis,
    /// wrapping periodically.
    #[inline]
    pub fn shift(&self, flat: usize, offset: &[isize]) -> usize {
        let n = self.n as isize;
        let mi = self.multi_index(flat);
        let mut out = 0usize;
        for a in 0..self.dim {
            let j = (mi[a] as isize + offset[a]).rem_euclid(n) as usize;
            out = out * self.n + j;
        }
        out
    }

    /// Flat index shifted by another flat "offset index" (componentwise
    /// addition mod n). Offset index `o` encodes the offset `multi_index(o)`.
    #[inline]
    pub fn shift_flat(&self, flat: usize, offset_flat: usize) -> usize {
        match self.dim {
            1 => {
                let s = flat + offset_flat;
                if s >= self.n {
                    s - self.n
                } else {
                    s
                }
            }
            _ => {
                let a = self.multi_index(flat);
                let b = self.multi_index(offset_flat);
                let i = (a[0] + b[0]) % self.n;
                let j = (a[1] + b[1]) % self.n;
                i * self.n + j
            }
        }
    }

    /// Offset vector (as signed lattice steps mapped to `(-n/2, n/2]`) for an
    /// offset index.
    pub fn offset_steps(&self, offset_flat: usize) -> [isize; 2] {
        let mi = self.multi_index(offset_flat);
        let n = self.n as isize;
        let mut out = [0isize; 2];
        for a in 0..self.dim {
            let m = mi[a] as isize;
            out[a] = if m * 2 > n { m - n } else { m };
        }
        out
    }

    /// Displacement (in torus coordinates, components in `(-1/2, 1/2]`) for an
    /// offset index.
    pub fn offset_displacement<T: Real>(&self, offset_flat: usize) -> Vec<T> {
        let h = self.spacing::<T>();
        let steps = self.offset_steps(offset_flat);
        (0..self.dim)
            .map(|a| cast::<T>(steps[a] as f64) * h)
            .collect()
    }

    /// Flat index of the grid point nearest to `x` (after wrapping into the
    /// fundamental cell); errors if `x` is not a grid point to within 1e-9.
    pub fn locate<T: Real>(&self, x: &[T]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::GridMismatch(format!(
                "point has dimension {}, grid has {}",
                x.len(),
                self.dim
            )));
        }
        let mut flat = 0usize;
        for &c in x {
            let v = crate::scalar::to_f64(c).rem_euclid(1.0);
            let j = (v * self.n as f64).round();
            if (v * self.n as f64 - j).abs() > 1e-9 * self.n as f64 {
                return Err(Error::GridMismatch(format!(
                    "coordinate {v} is not on the {}-point grid",
                    self.n
                )));
            }
            flat = flat * self.n + (j as usize % self.n);
        }
        Ok(flat)
    }
}

/// Real values attached to every point of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T: Real> {
    grid: TorusGrid,
    values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(grid: TorusGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "value vector has length {}, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("grid function has non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            values: vec![T::zero(); grid.len()],
            grid,
        }
    }

    pub fn constant(grid: TorusGrid, value: T) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    /// Samples a closure at every grid point.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[T]) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point::<T>(i))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, flat: usize) -> T {
        self.values[flat]
    }

    /// Value at an index shifted by signed per-axis offsets, wrapping.
    #[inline]
    pub fn get_shifted(&self, flat: usize, offset: &[isize]) -> T {
        self.values[self.grid.shift(flat, offset)]
    }

    pub fn sup_norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn mean(&self) -> T {
        let sum: T = self.values.iter().copied().sum();
        sum / cast::<T>(self.values.len() as f64)
    }

    /// Centered second-difference quotient along an axis.
    pub fn second_difference(&self, flat: usize, axis: usize) -> T {
        let h = self.grid.spacing::<T>();
        let mut fwd = [0isize; 2];
        fwd[axis] = 1;
        let mut bwd = [0isize; 2];
        bwd[axis] = -1;
        let up = self.get_shifted(flat, &fwd[..self.grid.dim()]);
        let dn = self.get_shifted(flat, &bwd[..self.grid.dim()]);
        (up - cast::<T>(2.0) * self.values[flat] + dn) / (h * h)
    }

    /// Centered first-difference quotient along an axis.
    pub fn centered_difference(&self, flat: usize, axis: usize) -> T {
        let h = self.grid.spacing::<T>();
        let mut fwd = [0isize; 2];
        fwd[axis] = 1;
        let mut bwd = [0isize; 2];
        bwd[axis] = -1;
        let up = self.get_shifted(flat, &fwd[..self.grid.dim()]);
        let dn = self.get_shifted(flat, &bwd[..self.grid.dim()]);
        (up - dn) / (cast::<T>(2.0) * h)
    }

    /// One-sided difference along an axis: forward if `forward`, else backward.
    pub fn one_sided_difference(&self, flat: usize, axis: usize, forward: bool) -> T {
        let h = self.grid.spacing::<T>();
        let mut off = [0isize; 2];
        off[axis] = if forward { 1 } else { -1 };
        let other = self.get_shifted(flat, &off[..self.grid.dim()]);
        if forward {
            (other - self.values[flat]) / h
        } else {
            (self.values[flat] - other) / h
        }
    }

    /// Sup norm plus the sup of second-difference quotients; stands in for a
    /// smoothness norm of grid data.
    pub fn smoothness_proxy(&self) -> T {
        let mut second = T::zero();
        for i in 0..self.values.len() {
            for axis in 0..self.grid.dim() {
                second = second.max(self.second_difference(i, axis).abs());
            }
        }
        self.sup_norm() + second
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spacing_times_n_is_one() {
        let g = TorusGrid::new(1, 12).unwrap();
        let h: f64 = g.spacing();
        assert_eq!(h * 12.0, 1.0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(TorusGrid::new(0, 16).is_err());
        assert!(TorusGrid::new(3, 16).is_err());
        assert!(TorusGrid::new(1, 4).is_err());
    }

    #[test]
    fn indexing_wraps_periodically() {
        let g = TorusGrid::new(1, 8).unwrap();
        assert_eq!(g.shift(7, &[1]), 0);
        assert_eq!(g.shift(0, &[-1]), 7);
        let g2 = TorusGrid::new(2, 8).unwrap();
        assert_eq!(g2.shift(7, &[0, 1]), 0);
        assert_eq!(g2.shift(0, &[-1, -1]), 7 * 8 + 7);
    }

    #[test]
    fn offset_displacement_maps_to_half_open_cell() {
        let g = TorusGrid::new(1, 8).unwrap();
        let d: Vec<f64> = g.offset_displacement(7);
        assert!((d[0] + 0.125).abs() < 1e-15);
        let d: Vec<f64> = g.offset_displacement(4);
        assert!((d[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locate_finds_grid_points_and_rejects_off_grid() {
        let g = TorusGrid::new(1, 8).unwrap();
        assert_eq!(g.locate(&[0.25f64]).unwrap(), 2);
        assert_eq!(g.locate(&[-0.125f64]).unwrap(), 7);
        assert!(g.locate(&[0.3f64]).is_err());
    }

    #[test]
    fn from_fn_and_norms() {
        let g = TorusGrid::new(1, 16).unwrap();
        let f = GridFunction::from_fn(g, |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos());
        assert!((f.sup_norm() - 1.0).abs() < 1e-12);
        assert!(f.mean().abs() < 1e-12);
    }
}
