//! Anisotropic kernel families `K(y, z) = |z' A(y, zhat) z|^(-(N+sigma)/2)`.
//!
//! The anisotropy map `A` takes a torus point `y`, a unit direction `zhat`
//! and a control index, and returns a symmetric positive matrix. Evenness in
//! `zhat` is required so the kernel is symmetric in `z`; eigenvalues of `A`
//! must stay inside the band fixed by the ellipticity constants, which pins
//! the kernel between `gamma |z|^-(N+sigma)` and `Gamma |z|^-(N+sigma)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::scalar::{cast, to_f64, Real};

type AnisotropyFn<T> = dyn Fn(&[T], &[T], usize) -> Vec<T> + Send + Sync;

/// How the anisotropy matrix is supplied.
#[derive(Clone)]
pub enum Anisotropy<T: Real> {
    /// A single constant symmetric matrix (row-major `N x N`).
    Constant(Vec<T>),
    /// Arbitrary map `(y, zhat, theta) -> N x N` matrix.
    Map(Arc<AnisotropyFn<T>>),
    /// Values tabulated on a `(y-grid) x (direction-grid) x (control)` lattice
    /// with multilinear interpolation.
    Table(Arc<AnisotropyTable<T>>),
}

impl<T: Real> std::fmt::Debug for Anisotropy<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Anisotropy::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Anisotropy::Map(_) => f.write_str("Map(..)"),
            Anisotropy::Table(t) => f
                .debug_struct("Table")
                .field("n_y", &t.n_y)
                .field("n_dir", &t.n_dir)
                .field("n_controls", &t.n_controls)
                .finish(),
        }
    }
}

/// Kernel family specification.
#[derive(Debug, Clone)]
pub struct KernelSpec<T: Real> {
    dim: usize,
    sigma: T,
    anisotropy: Anisotropy<T>,
    gamma: T,
    big_gamma: T,
    holder_alpha: T,
    n_controls: usize,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(
        dim: usize,
        sigma: T,
        anisotropy: Anisotropy<T>,
        gamma: T,
        big_gamma: T,
        holder_alpha: T,
        n_controls: usize,
    ) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::Validation(format!(
                "kernel dimension must be 1 or 2, got {dim}"
            )));
        }
        if !(sigma > T::one() && sigma < cast(2.0)) {
            return Err(Error::Validation(format!(
                "sigma must lie in (1, 2), got {}",
                to_f64(sigma)
            )));
        }
        if !(gamma > T::zero() && gamma <= big_gamma) {
            return Err(Error::Validation(
                "ellipticity constants need 0 < gamma <= Gamma".into(),
            ));
        }
        if !(holder_alpha > T::zero() && holder_alpha <= T::one()) {
            return Err(Error::Validation("holder_alpha must lie in (0, 1]".into()));
        }
        if n_controls == 0 {
            return Err(Error::Validation("control set must be nonempty".into()));
        }
        Ok(Self {
            dim,
            sigma,
            anisotropy,
            gamma,
            big_gamma,
            holder_alpha,
            n_controls,
        })
    }

    /// Isotropic kernel `c_iso(a) |z|^-(N+sigma)` given by `A = a I`.
    pub fn isotropic(dim: usize, sigma: T, a: T, n_controls: usize) -> Result<Self> {
        if a <= T::zero() {
            return Err(Error::Validation("isotropic coefficient must be positive".into()));
        }
        let mut m = vec![T::zero(); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = a;
        }
        let c = a.powf(-(cast::<T>(dim as f64) + sigma) / cast(2.0));
        Self::new(dim, sigma, Anisotropy::Constant(m), c, c, T::one(), n_controls)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn sigma(&self) -> T {
        self.sigma
    }

    #[inline]
    pub fn gamma(&self) -> T {
        self.gamma
    }

    #[inline]
    pub fn big_gamma(&self) -> T {
        self.big_gamma
    }

    #[inline]
    pub fn holder_alpha(&self) -> T {
        self.holder_alpha
    }

    #[inline]
    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// `(N + sigma) / 2`, the kernel exponent.
    #[inline]
    pub fn exponent(&self) -> T {
        (cast::<T>(self.dim as f64) + self.sigma) / cast(2.0)
    }

    /// Admissible eigenvalue band `[Gamma^(-2/(N+sigma)), gamma^(-2/(N+sigma))]`.
    pub fn eigenvalue_band(&self) -> (T, T) {
        let e = -cast::<T>(2.0) / (cast::<T>(self.dim as f64) + self.sigma);
        (self.big_gamma.powf(e), self.gamma.powf(e))
    }

    /// Anisotropy matrix at `(y, zhat, theta)`, row-major.
    pub fn matrix(&self, y: &[T], zhat: &[T], theta: usize) -> Vec<T> {
        match &self.anisotropy {
            Anisotropy::Constant(m) => m.clone(),
            Anisotropy::Map(f) => f(y, zhat, theta),
            Anisotropy::Table(t) => t.eval(y, zhat, theta),
        }
    }

    /// Kernel value at a nonzero displacement `z`.
    pub fn eval(&self, theta: usize, y: &[T], z: &[T]) -> Result<T> {
        if z.len() != self.dim || y.len() != self.dim {
            return Err(Error::GridMismatch(format!(
                "kernel expects dimension {}, got y: {}, z: {}",
                self.dim,
                y.len(),
                z.len()
            )));
        }
        let norm2: T = z.iter().map(|&c| c * c).sum();
        if norm2 == T::zero() {
            return Err(Error::Domain("kernel is singular at z = 0".into()));
        }
        let norm = norm2.sqrt();
        let zhat: Vec<T> = z.iter().map(|&c| c / norm).collect();
        let a = self.matrix(y, &zhat, theta);
        let mut q = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                q += z[i] * a[i * self.dim + j] * z[j];
            }
        }
        if q <= T::zero() {
            return Err(Error::Validation(
                "anisotropy matrix is not positive along the sampled direction".into(),
            ));
        }
        Ok(q.abs().powf(-self.exponent()))
    }

    /// For `dim == 1` the kernel is `c(y, theta) |z|^-(1+sigma)`; returns `c`.
    pub fn coefficient_1d(&self, y: &[T], theta: usize) -> Result<T> {
        if self.dim != 1 {
            return Err(Error::Domain("coefficient_1d requires dim = 1".into()));
        }
        self.eval(theta, y, &[T::one()])
    }

    /// If the family is a constant multiple of the identity, the coefficient
    /// `c` with `K = c |z|^-(N+sigma)`. Detection is structural: only
    /// `Anisotropy::Constant` diagonal matrices qualify.
    pub fn isotropic_constant(&self) -> Option<T> {
        if let Anisotropy::Constant(m) = &self.anisotropy {
            let d = self.dim;
            let a00 = m[0];
            for i in 0..d {
                for j in 0..d {
                    let v = m[i * d + j];
                    if i == j {
                        if (v - a00).abs() > cast::<T>(1e-14) * a00.abs() {
                            return None;
                        }
                    } else if v != T::zero() {
                        return None;
                    }
                }
            }
            Some(a00.powf(-self.exponent()))
        } else {
            None
        }
    }

    /// Samples `(y, zhat, theta)` triples and checks the structural
    /// requirements: matrix symmetry, evenness in `zhat`, eigenvalue band,
    /// the kernel sandwich, and periodicity in `y`. Failures are reported
    /// with the first violating witness, not thrown.
    pub fn validate(&self, sample_count: usize, seed: u64) -> ValidationReport<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.eigenvalue_band();
        let slack = cast::<T>(1e-9) * (T::one() + hi.abs());
        let mut checked = 0usize;
        for _ in 0..sample_count.max(1) {
            let y: Vec<T> = (0..self.dim).map(|_| cast(rng.gen::<f64>())).collect();
            let zhat = random_direction(&mut rng, self.dim);
            let theta = rng.gen_range(0..self.n_controls);
            checked += 1;

            let a = self.matrix(&y, &zhat, theta);
            let scale = a.iter().fold(T::zero(), |acc, v| acc.max(v.abs())) + T::one();

            for i in 0..self.dim {
                for j in (i + 1)..self.dim {
                    let diff = (a[i * self.dim + j] - a[j * self.dim + i]).abs();
                    if diff > cast::<T>(1e-12) * scale {
                        return ValidationReport::fail(
                            checked,
                            ValidationWitness::new("matrix not symmetric", y, zhat, theta, diff),
                        );
                    }
                }
            }

            let minus: Vec<T> = zhat.iter().map(|&c| -c).collect();
            let a_minus = self.matrix(&y, &minus, theta);
            for (u, v) in a.iter().zip(a_minus.iter()) {
                let diff = (*u - *v).abs();
                if diff > cast::<T>(1e-12) * scale {
                    return ValidationReport::fail(
                        checked,
                        ValidationWitness::new("matrix not even in zhat", y, zhat, theta, diff),
                    );
                }
            }

            match symmetric_eigenvalues(&a, self.dim) {
                Ok(eig) => {
                    let emin = eig[0];
                    let emax = eig[eig.len() - 1];
                    if emin < lo - slack || emax > hi + slack {
                        let worst = (lo - emin).max(emax - hi);
                        return ValidationReport::fail(
                            checked,
                            ValidationWitness::new(
                                "eigenvalue outside ellipticity band",
                                y,
                                zhat,
                                theta,
                                worst,
                            ),
                        );
                    }
                }
                Err(_) => {
                    return ValidationReport::fail(
                        checked,
                        ValidationWitness::new("eigenvalue computation failed", y, zhat, theta, T::zero()),
                    );
                }
            }

            for &r in &[0.5f64, 1.0, 2.0] {
                let z: Vec<T> = zhat.iter().map(|&c| c * cast::<T>(r)).collect();
                let k = match self.eval(theta, &y, &z) {
                    Ok(k) => k,
                    Err(_) => {
                        return ValidationReport::fail(
                            checked,
                            ValidationWitness::new("kernel evaluation failed", y, zhat, theta, T::zero()),
                        );
                    }
                };
                let pow = cast::<T>(r).powf(cast::<T>(self.dim as f64) + self.sigma);
                let scaled = k * pow;
                let tol = cast::<T>(1e-9) * self.big_gamma;
                if scaled < self.gamma - tol || scaled > self.big_gamma + tol {
                    return ValidationReport::fail(
                        checked,
                        ValidationWitness::new("kernel outside sandwich bounds", y, zhat, theta, scaled),
                    );
                }
            }

            for axis in 0..self.dim {
                let mut y_shift = y.clone();
                y_shift[axis] += T::one();
                let a_shift = self.matrix(&y_shift, &zhat, theta);
                for (u, v) in a.iter().zip(a_shift.iter()) {
                    let diff = (*u - *v).abs();
                    if diff > cast::<T>(1e-12) * scale {
                        return ValidationReport::fail(
                            checked,
                            ValidationWitness::new("matrix not 1-periodic in y", y, zhat, theta, diff),
                        );
                    }
                }
            }
        }
        ValidationReport::pass(checked)
    }

    /// Diagnostic Holder-quotient spot check of the anisotropy map in `y`:
    /// max over sampled pairs of `|A(y1) - A(y2)|_inf / |y1 - y2|^alpha`.
    /// The declared exponent is not verifiable exactly; this estimates the
    /// seminorm the declaration refers to.
    pub fn holder_spot_check(&self, sample_count: usize, seed: u64) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut quotient = T::zero();
        for _ in 0..sample_count.max(1) {
            let y1: Vec<T> = (0..self.dim).map(|_| cast(rng.gen::<f64>())).collect();
            let scale = 10f64.powf(-rng.gen_range(0.0..4.0));
            let y2: Vec<T> = y1
                .iter()
                .map(|&c| c + cast::<T>(rng.gen_range(-scale..scale)))
                .collect();
            let dist2: T = y1
                .iter()
                .zip(y2.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            let dist = dist2.sqrt();
            if dist == T::zero() {
                continue;
            }
            let zhat = random_direction(&mut rng, self.dim);
            let theta = rng.gen_range(0..self.n_controls);
            let a1 = self.matrix(&y1, &zhat, theta);
            let a2 = self.matrix(&y2, &zhat, theta);
            let diff = a1
                .iter()
                .zip(a2.iter())
                .fold(T::zero(), |acc, (u, v)| acc.max((*u - *v).abs()));
            quotient = quotient.max(diff / dist.powf(self.holder_alpha));
        }
        quotient
    }
}

fn random_direction<T: Real>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    match dim {
        1 => {
            if rng.gen::<bool>() {
                vec![T::one()]
            } else {
                vec![-T::one()]
            }
        }
        _ => {
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            vec![cast(t.cos()), cast(t.sin())]
        }
    }
}

/// Outcome of [`KernelSpec::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport<T: Real> {
    pub passed: bool,
    pub samples_checked: usize,
    pub witness: Option<ValidationWitness<T>>,
}

impl<T: Real> ValidationReport<T> {
    fn pass(samples_checked: usize) -> Self {
        Self {
            passed: true,
            samples_checked,
            witness: None,
        }
    }

    fn fail(samples_checked: usize, witness: ValidationWitness<T>) -> Self {
        Self {
            passed: false,
            samples_checked,
            witness: Some(witness),
        }
    }
}

/// First violating sample found by validation.
#[derive(Debug, Clone)]
pub struct ValidationWitness<T: Real> {
    pub check: &'static str,
    pub y: Vec<T>,
    pub zhat: Vec<T>,
    pub theta: usize,
    pub detail: T,
}

impl<T: Real> ValidationWitness<T> {
    fn new(check: &'static str, y: Vec<T>, zhat: Vec<T>, theta: usize, detail: T) -> Self {
        Self {
            check,
            y,
            zhat,
            theta,
            detail,
        }
    }
}

/// Tabulated anisotropy on a `(y, direction, control)` lattice.
///
/// Text format: a header line `dim n_y n_dir n_controls`, then one row per
/// `(y-index, direction-index, control-index)` holding the three indices
/// followed by the `N(N+1)/2` upper-triangle entries (row-major). `#` starts
/// a comment. `y` indices flatten an `n_y^N` lattice row-major; direction
/// indices sample angles `k pi / n_dir` (period `pi`, so evenness is built
/// in); for `dim = 1` the direction grid must have a single entry.
#[derive(Debug, Clone)]
pub struct AnisotropyTable<T: Real> {
    dim: usize,
    n_y: usize,
    n_dir: usize,
    n_controls: usize,
    /// `[y][dir][control][triangle-entry]`, flattened.
    data: Vec<T>,
}

impl<T: Real> AnisotropyTable<T> {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize, usize, usize)> = None;
        let mut rows: Vec<(usize, usize, usize, Vec<T>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| Error::Config {
                line: lineno + 1,
                msg,
            };
            if header.is_none() {
                if fields.len() != 4 {
                    return Err(err("header must be `dim n_y n_dir n_controls`".into()));
                }
                let vals: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad header field: {e}")))?;
                let (dim, n_y, n_dir, n_controls) = (vals[0], vals[1], vals[2], vals[3]);
                if dim == 0 || dim > 2 {
                    return Err(err(format!("dim must be 1 or 2, got {dim}")));
                }
                if dim == 1 && n_dir != 1 {
                    return Err(err("dim = 1 requires a single direction sample".into()));
                }
                if n_y == 0 || n_dir == 0 || n_controls == 0 {
                    return Err(err("lattice sizes must be positive".into()));
                }
                header = Some((dim, n_y, n_dir, n_controls));
                continue;
            }
            let (dim, _, _, _) = header.unwrap();
            let tri = dim * (dim + 1) / 2;
            if fields.len() != 3 + tri {
                return Err(err(format!(
                    "expected 3 indices and {tri} matrix entries, got {} fields",
                    fields.len()
                )));
            }
            let yi = fields[0]
                .parse::<usize>()
                .map_err(|e| err(format!("bad y index: {e}")))?;
            let di = fields[1]
                .parse::<usize>()
                .map_err(|e| err(format!("bad direction index: {e}")))?;
            let ti = fields[2]
                .parse::<usize>()
                .map_err(|e| err(format!("bad control index: {e}")))?;
            let entries: Vec<T> = fields[3..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map(cast::<T>)
                        .map_err(|e| err(format!("bad matrix entry: {e}")))
                })
                .collect::<Result<_>>()?;
            rows.push((yi, di, ti, entries));
        }
        let (dim, n_y, n_dir, n_controls) =
            header.ok_or_else(|| Error::Validation("anisotropy table is empty".into()))?;
        let tri = dim * (dim + 1) / 2;
        let y_sites = n_y.pow(dim as u32);
        let expect = y_sites * n_dir * n_controls;
        if rows.len() != expect {
            return Err(Error::Validation(format!(
                "anisotropy table has {} rows, expected {}",
                rows.len(),
                expect
            )));
        }
        let mut data = vec![T::nan(); expect * tri];
        for (yi, di, ti, entries) in rows {
            if yi >= y_sites || di >= n_dir || ti >= n_controls {
                return Err(Error::Validation(format!(
                    "table index ({yi}, {di}, {ti}) out of range"
                )));
            }
            let base = ((yi * n_dir + di) * n_controls + ti) * tri;
            data[base..base + tri].copy_from_slice(&entries);
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("anisotropy table has duplicate/missing rows".into()));
        }
        Ok(Self {
            dim,
            n_y,
            n_dir,
            n_controls,
            data,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    fn triangle_at(&self, yi: usize, di: usize, theta: usize) -> &[T] {
        let tri = self.dim * (self.dim + 1) / 2;
        let base = ((yi * self.n_dir + di) * self.n_controls + theta) * tri;
        &self.data[base..base + tri]
    }

    /// Multilinear interpolation, periodic in `y` and (for 2D) in the
    /// direction angle with period `pi`.
    pub fn eval(&self, y: &[T], zhat: &[T], theta: usize) -> Vec<T> {
        let tri = self.dim * (self.dim + 1) / 2;
        let mut acc = vec![T::zero(); tri];
        // y interpolation stencil: product of per-axis (index, weight) pairs
        let mut sites: Vec<(usize, T)> = vec![(0, T::one())];
        for a in 0..self.dim {
            let v = to_f64(y[a]).rem_euclid(1.0) * self.n_y as f64;
            let j0 = v.floor() as usize % self.n_y;
            let w1 = cast::<T>(v - v.floor());
            let w0 = T::one() - w1;
            let j1 = (j0 + 1) % self.n_y;
            let mut next = Vec::with_capacity(sites.len() * 2);
            for &(idx, w) in &sites {
                next.push((idx * self.n_y + j0, w * w0));
                next.push((idx * self.n_y + j1, w * w1));
            }
            sites = next;
        }
        // direction stencil
        let dirs: Vec<(usize, T)> = if self.dim == 1 {
            vec![(0, T::one())]
        } else {
            let ang = to_f64(zhat[1]).atan2(to_f64(zhat[0])).rem_euclid(std::f64::consts::PI);
            let v = ang / std::f64::consts::PI * self.n_dir as f64;
            let d0 = v.floor() as usize % self.n_dir;
            let w1 = cast::<T>(v - v.floor());
            let d1 = (d0 + 1) % self.n_dir;
            vec![(d0, T::one() - w1), (d1, w1)]
        };
        for &(yi, wy) in &sites {
            for &(di, wd) in &dirs {
                let entries = self.triangle_at(yi, di, theta);
                for (a, e) in acc.iter_mut().zip(entries.iter()) {
                    *a += wy * wd * *e;
                }
            }
        }
        // expand upper triangle to a full symmetric matrix
        let mut m = vec![T::zero(); self.dim * self.dim];
        let mut k = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                m[i * self.dim + j] = acc[k];
                m[j * self.dim + i] = acc[k];
                k += 1;
            }
        }
        m
    }
}
