//! Periodic 1D grid, quasimatrices, quadrature and Fourier-spectral derivatives.
//!
//! A [`Quasimatrix`] is the discrete stand-in for an `∞ × k` object: `k` fields
//! sampled on the `N` equispaced nodes of a [`Grid1D`]. All inner products use
//! the rectangle rule on the periodic grid, which is exact for trigonometric
//! polynomials of degree below `N/2`.
//!
//! Transform convention: unnormalized forward FFT, `1/N` on the inverse.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DboError, Result};

/// Equispaced periodic grid on `[0, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    length: f64,
    dealias: bool,
}

impl Grid1D {
    pub fn new(n_points: usize, length: f64) -> Result<Self> {
        if n_points < 2 || n_points % 2 != 0 {
            return Err(DboError::InvalidArgument(format!(
                "grid needs an even number of points >= 2, got {n_points}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(DboError::InvalidArgument(format!(
                "grid length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n_points, length, dealias: false })
    }

    /// Grid on `[0, 2π)`.
    pub fn periodic_2pi(n_points: usize) -> Result<Self> {
        Self::new(n_points, 2.0 * PI)
    }

    /// Enable the 2/3-rule filter on spectral derivatives.
    pub fn with_dealiasing(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dealias(&self) -> bool {
        self.dealias
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.length / self.n_points as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// Two grids are compatible when they discretize the same domain with the
    /// same nodes. The dealiasing flag does not affect compatibility.
    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n_points == other.n_points && self.length == other.length
    }

    pub fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(DboError::GridMismatch(format!(
                "N={} L={} vs N={} L={}",
                self.n_points, self.length, other.n_points, other.length
            )))
        }
    }
}

/// `k` fields sampled on a shared grid, stored as an `N × k` column-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Quasimatrix {
    grid: Grid1D,
    values: DMatrix<f64>,
}

impl Quasimatrix {
    pub fn new(grid: Grid1D, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.n_points() {
            return Err(DboError::Dimension(format!(
                "quasimatrix has {} rows but grid has {} points",
                values.nrows(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid1D, n_cols: usize) -> Self {
        Self { grid, values: DMatrix::zeros(grid.n_points(), n_cols) }
    }

    /// Build column by column from `f(x, column)`.
    pub fn from_fn(grid: Grid1D, n_cols: usize, f: impl Fn(f64, usize) -> f64) -> Self {
        let values = DMatrix::from_fn(grid.n_points(), n_cols, |j, c| f(grid.node(j), c));
        Self { grid, values }
    }

    /// Build from one closure per column.
    pub fn from_columns(grid: Grid1D, cols: &[&dyn Fn(f64) -> f64]) -> Self {
        Self::from_fn(grid, cols.len(), |x, c| cols[c](x))
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn column(&self, c: usize) -> Quasimatrix {
        Self { grid: self.grid, values: self.values.columns(c, 1).into_owned() }
    }

    /// `self · R` for a constant `k × m` matrix.
    pub fn mul_mat(&self, rhs: &DMatrix<f64>) -> Quasimatrix {
        Self { grid: self.grid, values: &self.values * rhs }
    }

    /// Replace values, keeping the grid.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Quasimatrix> {
        Self::new(self.grid, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `⟨u, v⟩ = Δx Σ_j u_j v_j` for single-column quasimatrices.
pub fn inner_product(u: &Quasimatrix, v: &Quasimatrix) -> Result<f64> {
    u.grid.check_same(&v.grid)?;
    if u.n_cols() != 1 || v.n_cols() != 1 {
        return Err(DboError::Dimension("inner_product expects single columns".into()));
    }
    Ok(u.grid.dx() * dot(u.values.as_slice(), v.values.as_slice()))
}

/// Matrix of pairwise inner products, `(i, j) = ⟨u_i, v_j⟩`.
pub fn gram(u: &Quasimatrix, v: &Quasimatrix) -> Result<DMatrix<f64>> {
    u.grid.check_same(&v.grid)?;
    let n = u.n_points();
    let dx = u.grid.dx();
    let us = u.values.as_slice();
    let vs = v.values.as_slice();
    Ok(DMatrix::from_fn(u.n_cols(), v.n_cols(), |i, j| {
        dx * dot(&us[i * n..(i + 1) * n], &vs[j * n..(j + 1) * n])
    }))
}

/// `sqrt(Σ_i ⟨a_i, a_i⟩)`.
pub fn frobenius_norm(a: &Quasimatrix) -> f64 {
    (a.grid.dx() * a.values.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Fixed ascending-index reduction.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(n: usize) -> PlanPair {
    static CACHE: OnceLock<Mutex<HashMap<usize, PlanPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Signed integer wavenumber of FFT bin `m`.
#[inline]
fn wavenumber(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Spectral first and second derivatives of one real periodic column.
///
/// Both derivatives are real, so their spectra are packed as `D1 + i·D2` and
/// recovered from a single inverse transform.
fn derivative_column(
    grid: &Grid1D,
    input: &[f64],
    first: Option<&mut [f64]>,
    second: Option<&mut [f64]>,
    fwd: &dyn Fft<f64>,
    inv: &dyn Fft<f64>,
) {
    let n = input.len();
    let scale = 2.0 * PI / grid.length();
    let cutoff = if grid.dealias() { n / 3 } else { n / 2 };
    let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut buf);
    let want1 = first.is_some();
    let want2 = second.is_some();
    for (m, c) in buf.iter_mut().enumerate() {
        let km = wavenumber(m, n);
        let nyquist = m == n / 2;
        if km.unsigned_abs() as usize > cutoff {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        let k = scale * km as f64;
        let d1 = if want1 && !nyquist { Complex64::new(0.0, k) * *c } else { Complex64::new(0.0, 0.0) };
        let d2 = if want2 { -k * k * *c } else { Complex64::new(0.0, 0.0) };
        *c = d1 + Complex64::new(0.0, 1.0) * d2;
    }
    inv.process(&mut buf);
    let inv_n = 1.0 / n as f64;
    if let Some(out) = first {
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re * inv_n;
        }
    }
    if let Some(out) = second {
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.im * inv_n;
        }
    }
}

fn apply_derivatives(u: &Quasimatrix, first: bool, second: bool) -> (Option<Quasimatrix>, Option<Quasimatrix>) {
    let n = u.n_points();
    let k = u.n_cols();
    let (fwd, inv) = plans(n);
    let mut d1 = first.then(|| DMatrix::<f64>::zeros(n, k));
    let mut d2 = second.then(|| DMatrix::<f64>::zeros(n, k));
    let src = u.values.as_slice();
    let grid = u.grid;
    match (d1.as_mut(), d2.as_mut()) {
        (Some(a), Some(b)) => {
            a.as_mut_slice()
                .par_chunks_mut(n)
                .zip(b.as_mut_slice().par_chunks_mut(n))
                .enumerate()
                .for_each(|(c, (o1, o2))| {
                    derivative_column(&grid, &src[c * n..(c + 1) * n], Some(o1), Some(o2), &*fwd, &*inv)
                });
        }
        (Some(a), None) => {
            a.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(c, o1)| {
                derivative_column(&grid, &src[c * n..(c + 1) * n], Some(o1), None, &*fwd, &*inv)
            });
        }
        (None, Some(b)) => {
            b.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(c, o2)| {
                derivative_column(&grid, &src[c * n..(c + 1) * n], None, Some(o2), &*fwd, &*inv)
            });
        }
        (None, None) => {}
    }
    (
        d1.map(|values| Quasimatrix { grid, values }),
        d2.map(|values| Quasimatrix { grid, values }),
    )
}

/// Fourier-spectral `∂/∂x` of every column. The Nyquist mode is dropped.
pub fn ddx(u: &Quasimatrix) -> Quasimatrix {
    apply_derivatives(u, true, false).0.expect("first derivative requested")
}

/// Fourier-spectral `∂²/∂x²` of every column.
pub fn d2dx2(u: &Quasimatrix) -> Quasimatrix {
    apply_derivatives(u, false, true).1.expect("second derivative requested")
}

/// Both derivatives at the cost of one forward and one inverse transform per column.
pub fn ddx_and_d2dx2(u: &Quasimatrix) -> (Quasimatrix, Quasimatrix) {
    let (a, b) = apply_derivatives(u, true, true);
    (a.expect("first derivative requested"), b.expect("second derivative requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize) -> Grid1D {
        Grid1D::periodic_2pi(n).unwrap()
    }

    #[test]
    fn rejects_odd_or_degenerate_grids() {
        assert!(Grid1D::new(7, 1.0).is_err());
        assert!(Grid1D::new(8, 0.0).is_err());
        assert!(Grid1D::new(8, f64::NAN).is_err());
        let grid = Grid1D::new(8, 2.0).unwrap();
        assert_eq!(grid.nodes(), (0..8).map(|j| j as f64 * 0.25).collect::<Vec<_>>());
    }

    #[test]
    fn inner_product_examples() {
        let grid = g(512);
        let one = Quasimatrix::from_fn(grid, 1, |_, _| 1.0);
        let s = Quasimatrix::from_fn(grid, 1, |x, _| x.sin());
        let c = Quasimatrix::from_fn(grid, 1, |x, _| x.cos());
        assert!((inner_product(&one, &one).unwrap() - 2.0 * PI).abs() < 1e-12);
        assert!(inner_product(&s, &c).unwrap().abs() < 1e-13);
        // analytic ∫ sin² over [0, 2π] = π
        assert!((inner_product(&s, &s).unwrap() - PI).abs() < 1e-13);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = Quasimatrix::zeros(g(16), 1);
        let b = Quasimatrix::zeros(g(32), 1);
        assert!(matches!(inner_product(&a, &b), Err(DboError::GridMismatch(_))));
        assert!(matches!(gram(&a, &b), Err(DboError::GridMismatch(_))));
    }

    #[test]
    fn gram_examples() {
        let grid = g(64);
        let r = 1.0 / PI.sqrt();
        let orth = Quasimatrix::from_fn(grid, 2, |x, c| if c == 0 { r * x.sin() } else { r * x.cos() });
        let gm = gram(&orth, &orth).unwrap();
        assert!((gm - DMatrix::identity(2, 2)).amax() < 1e-14);

        let ones = Quasimatrix::from_fn(grid, 1, |_, _| 1.0);
        let sc = Quasimatrix::from_fn(grid, 2, |x, c| if c == 0 { x.sin() } else { x.cos() });
        assert!(gram(&ones, &sc).unwrap().amax() < 1e-13);
    }

    #[test]
    fn gram_matches_entrywise_loop() {
        let grid = Grid1D::new(8, 3.0).unwrap();
        let u = Quasimatrix::from_fn(grid, 3, |x, c| (x * (c as f64 + 1.3)).sin() + 0.2 * c as f64);
        let v = Quasimatrix::from_fn(grid, 2, |x, c| (x * x * 0.3 - c as f64).cos());
        let gm = gram(&u, &v).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let e = inner_product(&u.column(i), &v.column(j)).unwrap();
                assert_eq!(gm[(i, j)], e);
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        let grid = g(128);
        assert_eq!(frobenius_norm(&Quasimatrix::zeros(grid, 3)), 0.0);
        let sc = Quasimatrix::from_fn(grid, 2, |x, c| if c == 0 { x.sin() } else { x.cos() });
        assert!((frobenius_norm(&sc) - (2.0 * PI).sqrt()).abs() < 1e-13);
        let a = Quasimatrix::from_fn(grid, 3, |x, c| (x + c as f64).exp().sin());
        let tr = gram(&a, &a).unwrap().trace().sqrt();
        assert!((frobenius_norm(&a) - tr).abs() < 1e-12 * tr);
    }

    #[test]
    fn derivative_examples() {
        let grid = g(64);
        let s = Quasimatrix::from_fn(grid, 1, |x, _| x.sin());
        let d = ddx(&s);
        for j in 0..64 {
            assert!((d.values()[(j, 0)] - grid.node(j).cos()).abs() < 1e-12);
        }
        let c = Quasimatrix::from_fn(grid, 1, |_, _| 3.5);
        assert!(d2dx2(&c).values().amax() < 1e-12);
    }

    /// 8th-order central differences of exp(cos x) on a fine grid.
    fn fd8(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        let c = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let mut s = 0.0;
        for (k, ck) in c.iter().enumerate() {
            let m = (k + 1) as f64;
            s += ck * (f(x + m * h) - f(x - m * h));
        }
        s / h
    }

    #[test]
    fn ddx_matches_fine_grid_finite_differences() {
        let grid = g(4096);
        let f = |x: f64| x.cos().exp();
        let u = Quasimatrix::from_fn(grid, 1, |x, _| f(x));
        let d = ddx(&u);
        let h = grid.dx();
        for j in (0..4096).step_by(37) {
            let x = grid.node(j);
            assert!((d.values()[(j, 0)] - fd8(f, x, h)).abs() < 1e-8);
        }
    }

    #[test]
    fn quadrature_annihilates_nonzero_modes() {
        let grid = g(32);
        let one = Quasimatrix::from_fn(grid, 1, |_, _| 1.0);
        for m in 1..16 {
            let s = Quasimatrix::from_fn(grid, 1, |x, _| (m as f64 * x).sin());
            let c = Quasimatrix::from_fn(grid, 1, |x, _| (m as f64 * x).cos());
            assert!(inner_product(&s, &one).unwrap().abs() < 1e-12);
            assert!(inner_product(&c, &one).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_consistency() {
        let grid = g(16);
        let u = Quasimatrix::from_fn(grid, 2, |x, c| (x * 1.7 + c as f64).sin() * 3.0);
        let direct = grid.dx() * u.values().iter().map(|v| v * v).sum::<f64>();
        assert_eq!(frobenius_norm(&u), direct.sqrt());
        assert!((frobenius_norm(&u).powi(2) - direct).abs() <= 4.0 * f64::EPSILON * direct);
    }

    #[test]
    fn dealiasing_removes_high_modes() {
        let grid = g(48).with_dealiasing(true);
        let u = Quasimatrix::from_fn(grid, 1, |x, _| (20.0 * x).sin() + x.sin());
        let d = ddx(&u);
        for j in 0..48 {
            assert!((d.values()[(j, 0)] - grid.node(j).cos()).abs() < 1e-12);
        }
    }

    fn band_limited(grid: Grid1D, coeffs: &[(f64, f64)]) -> Quasimatrix {
        Quasimatrix::from_fn(grid, 1, |x, _| {
            coeffs
                .iter()
                .enumerate()
                .map(|(m, (a, b))| a * (m as f64 * x).cos() + b * (m as f64 * x).sin())
                .sum()
        })
    }

    proptest! {
        #[test]
        fn gram_bilinearity(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = g(32);
            let u = Quasimatrix::from_fn(grid, 3, |x, c| (x * (c + 1) as f64).sin() + 0.3 * c as f64);
            let v = Quasimatrix::from_fn(grid, 2, |x, c| (x * (c + 2) as f64).cos() - 0.1);
            let ru = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let rv = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let g0 = gram(&u, &v).unwrap();
            let left = gram(&u.mul_mat(&ru), &v).unwrap() - ru.transpose() * &g0;
            let right = gram(&u, &v.mul_mat(&rv)).unwrap() - &g0 * &rv;
            prop_assert!(left.amax() < 1e-12);
            prop_assert!(right.amax() < 1e-12);
        }

        #[test]
        fn ddx_twice_is_d2dx2(coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..15)) {
            let grid = g(32);
            let u = band_limited(grid, &coeffs);
            let twice = ddx(&ddx(&u));
            let direct = d2dx2(&u);
            prop_assert!((twice.values() - direct.values()).amax() < 1e-10);
            let (a, b) = ddx_and_d2dx2(&u);
            prop_assert!((a.values() - ddx(&u).values()).amax() < 1e-12);
            prop_assert!((b.values() - direct.values()).amax() < 1e-12);
        }
    }
}
