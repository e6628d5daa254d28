//! Transport model pieces: Burgers velocity, per-species diffusivity, pluggable
//! reactive sources, and the projections of the transport right-hand side onto
//! the DBO modes.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{DboError, Result};
use crate::grid::{d2dx2, ddx, ddx_and_d2dx2, gram, Grid1D, Quasimatrix};
use crate::lowrank::{DboState, SpeciesProjection};

/// Default number of grid points per block in the streaming source loop.
pub const DEFAULT_SOURCE_BLOCK: usize = 1024;

/// Space-time multiplier `g(x, t)` applied to every diffusivity.
pub type ScalingHook = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Per-species diffusivities `α_i ≥ 0` with an optional scalar hook `g(x, t)`.
///
/// The diffusive flux of species `i` is `α_i · g(x, t) · ∂²φ_i/∂x²`.
#[derive(Clone)]
pub struct DiffusivitySpec {
    alpha: Vec<f64>,
    scaling: Option<ScalingHook>,
}

impl fmt::Debug for DiffusivitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusivitySpec")
            .field("alpha", &self.alpha)
            .field("scaling", &self.scaling.is_some())
            .finish()
    }
}

impl DiffusivitySpec {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if let Some((i, a)) = alpha.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a >= 0.0)) {
            return Err(DboError::InvalidArgument(format!("diffusivity of species {} is {a}", i + 1)));
        }
        Ok(Self { alpha, scaling: None })
    }

    /// `α_i = c / sqrt(i)` for `i = 1 … n_s`.
    pub fn c_over_sqrt_i(c: f64, n_s: usize) -> Result<Self> {
        Self::new((1..=n_s).map(|i| c / (i as f64).sqrt()).collect())
    }

    pub fn uniform(alpha: f64, n_s: usize) -> Result<Self> {
        Self::new(vec![alpha; n_s])
    }

    pub fn zero(n_s: usize) -> Self {
        Self { alpha: vec![0.0; n_s], scaling: None }
    }

    pub fn with_scaling(mut self, hook: ScalingHook) -> Self {
        self.scaling = Some(hook);
        self
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n_species(&self) -> usize {
        self.alpha.len()
    }

    /// The common value when every species has the same diffusivity.
    pub fn common_value(&self) -> Option<f64> {
        let first = *self.alpha.first()?;
        self.alpha.iter().all(|&a| a == first).then_some(first)
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().all(|&a| a == 0.0)
    }

    /// `g(x_j, t)` on the grid, `None` when no hook is set.
    pub fn scaling_on(&self, grid: &Grid1D, t: f64) -> Option<DVector<f64>> {
        self.scaling
            .as_ref()
            .map(|g| DVector::from_iterator(grid.n_points(), grid.nodes().into_iter().map(|x| g(x, t))))
    }

    /// Low-rank diffusion matrix `α_Y = Yᵀ diag(α) Y`.
    pub fn alpha_y(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let r = y.ncols();
        if let Some(a) = self.common_value() {
            return DMatrix::identity(r, r) * a;
        }
        let ay = DMatrix::from_fn(y.nrows(), r, |i, j| self.alpha[i] * y[(i, j)]);
        y.transpose() * ay
    }
}

/// Velocity sampled on the grid plus the viscosity used by the Burgers provider.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub v: Quasimatrix,
    pub nu: f64,
}

impl VelocityField {
    pub fn new(v: Quasimatrix, nu: f64) -> Result<Self> {
        if v.n_cols() != 1 {
            return Err(DboError::Dimension("velocity must be a single column".into()));
        }
        if !v.is_finite() {
            return Err(DboError::NonFinite("velocity".into()));
        }
        Ok(Self { v, nu })
    }

    pub fn zero(grid: Grid1D) -> Self {
        Self { v: Quasimatrix::zeros(grid, 1), nu: 0.0 }
    }

    /// `v(x, 0) = 0.5 (exp(cos x) − 1.5) sin(x + 2π · 0.37)`.
    pub fn shock_forming_ic(grid: Grid1D, nu: f64) -> Self {
        let v = Quasimatrix::from_fn(grid, 1, |x, _| 0.5 * (x.cos().exp() - 1.5) * (x + 2.0 * PI * 0.37).sin());
        Self { v, nu }
    }

    pub fn is_zero(&self) -> bool {
        self.v.values().iter().all(|&x| x == 0.0)
    }
}

/// `−v ∂v/∂x + ν ∂²v/∂x²`.
pub fn burgers_rhs(v: &VelocityField) -> Quasimatrix {
    let (dv, d2v) = ddx_and_d2dx2(&v.v);
    let values = v.v.values().component_mul(dv.values()) * -1.0 + d2v.values() * v.nu;
    v.v.with_values(values).expect("same shape")
}

/// A pointwise reaction source `S(φ, ρ, T)`.
pub trait SourceTerm: Send + Sync {
    /// Writes `S_k` for the species vector `phi` at one point.
    fn evaluate(&self, phi: &[f64], rho: Option<f64>, temperature: Option<f64>, out: &mut [f64]);

    /// Smallest species count the model can act on.
    fn min_species(&self) -> usize {
        0
    }

    /// True when the source vanishes identically.
    fn is_identically_zero(&self) -> bool {
        false
    }
}

/// Named source model with its parameter record.
#[derive(Clone)]
pub struct SourceModel {
    name: String,
    params: BTreeMap<String, f64>,
    term: Arc<dyn SourceTerm>,
}

impl fmt::Debug for SourceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceModel").field("name", &self.name).field("params", &self.params).finish()
    }
}

impl SourceModel {
    pub fn new(name: impl Into<String>, params: BTreeMap<String, f64>, term: Arc<dyn SourceTerm>) -> Self {
        Self { name: name.into(), params, term }
    }

    pub fn none() -> Self {
        Self::new("none", BTreeMap::new(), Arc::new(NoSource))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn is_none(&self) -> bool {
        self.term.is_identically_zero()
    }

    pub fn evaluate(&self, phi: &[f64], out: &mut [f64]) {
        self.term.evaluate(phi, None, None, out)
    }

    pub fn check_species(&self, n_s: usize) -> Result<()> {
        let need = self.term.min_species();
        if n_s < need {
            return Err(DboError::InvalidArgument(format!(
                "source '{}' needs at least {need} species, got {n_s}",
                self.name
            )));
        }
        Ok(())
    }
}

struct NoSource;

impl SourceTerm for NoSource {
    fn evaluate(&self, _: &[f64], _: Option<f64>, _: Option<f64>, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_identically_zero(&self) -> bool {
        true
    }
}

/// Irreversible `A + B → C` with rate `k`; species beyond the first three are inert.
#[derive(Debug, Clone, Copy)]
pub struct ToyAbc {
    pub k: f64,
}

impl SourceTerm for ToyAbc {
    fn evaluate(&self, phi: &[f64], _: Option<f64>, _: Option<f64>, out: &mut [f64]) {
        out.fill(0.0);
        let w = self.k * phi[0] * phi[1];
        out[0] = -w;
        out[1] = -w;
        out[2] = w;
    }

    fn min_species(&self) -> usize {
        3
    }
}

pub fn toy_kinetics(k: f64) -> SourceModel {
    let mut params = BTreeMap::new();
    params.insert("k".to_string(), k);
    SourceModel::new("toy_abc", params, Arc::new(ToyAbc { k }))
}

type SourceFactory = fn(&BTreeMap<String, f64>) -> Result<SourceModel>;

/// Source models keyed by name. Built-ins: `none`, `toy_abc`.
pub struct SourceRegistry {
    factories: HashMap<String, SourceFactory>,
}

impl Default for SourceRegistry {
    fn default() -> Self {
        let mut reg = Self { factories: HashMap::new() };
        reg.register("none", |_| Ok(SourceModel::none()));
        reg.register("toy_abc", |p| {
            let k = p.get("k").copied().unwrap_or(1.0);
            if !k.is_finite() {
                return Err(DboError::InvalidArgument("toy_abc rate k must be finite".into()));
            }
            Ok(toy_kinetics(k))
        });
        reg
    }
}

impl SourceRegistry {
    pub fn register(&mut self, name: &str, factory: SourceFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn build(&self, name: &str, params: &BTreeMap<String, f64>) -> Result<SourceModel> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| DboError::InvalidArgument(format!("unknown source model '{name}'")))?;
        f(params)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.factories.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// Species initial condition `φ_i(x, 0) = Σ_{n=1}^{n_s} ζ_i^{(n)} n^{-b} sin(nπx/L)`.
///
/// `ζ` are standard normal variates from ChaCha12 seeded with `seed`, drawn in
/// species-major order (`i` outer, `n` inner); `rand_distr::StandardNormal`
/// (ziggurat) converts uniforms to normals.
pub fn species_ic(n_s: usize, b: f64, seed: u64, grid: &Grid1D) -> Result<Quasimatrix> {
    if !(b > 0.0) {
        return Err(DboError::InvalidArgument(format!("spectral decay b must be positive, got {b}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // coef[(n, i)] = ζ_i^{(n+1)}
    let mut coef = DMatrix::<f64>::zeros(n_s, n_s);
    for i in 0..n_s {
        for n in 0..n_s {
            coef[(n, i)] = StandardNormal.sample(&mut rng);
        }
    }
    let l = grid.length();
    let basis = DMatrix::from_fn(grid.n_points(), n_s, |j, n| {
        let m = (n + 1) as f64;
        (m * PI * grid.node(j) / l).sin() / m.powf(b)
    });
    Quasimatrix::new(*grid, basis * coef)
}

/// Projections of `M(Φ)` at `Φ = UΣYᵀ`.
#[derive(Debug, Clone)]
pub struct ProjectedRhs {
    /// `M(Φ) Y`, `N × r`.
    pub my: Quasimatrix,
    /// `⟨M(Φ), U⟩`, `n_s × r`.
    pub mtu: SpeciesProjection,
    /// `Yᵀ α Y`.
    pub alpha_y: DMatrix<f64>,
}

/// Streams over grid points to accumulate `S·Y` (`N × r`) and `⟨S, U⟩`
/// (`n_s × r`) without forming the `N × n_s` source matrix.
///
/// Blocks are processed in parallel; partial sums are reduced in block order.
pub fn stream_source_projections(
    s: &DboState,
    src: &SourceModel,
    block: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = s.u.n_points();
    let r = s.rank();
    let ns = s.n_species();
    let block = block.max(1);
    let dx = s.grid().dx();
    let us = s.u_sigma();
    let u = s.u.values();
    let yt = s.y.transpose();
    let starts: Vec<usize> = (0..n).step_by(block).collect();

    let partials: Vec<Result<(usize, DMatrix<f64>, DMatrix<f64>)>> = starts
        .par_iter()
        .map(|&start| {
            let len = block.min(n - start);
            let mut sy = DMatrix::<f64>::zeros(len, r);
            let mut su = DMatrix::<f64>::zeros(ns, r);
            let mut phi = vec![0.0; ns];
            let mut out = vec![0.0; ns];
            for jj in 0..len {
                let j = start + jj;
                // φ(x_j) = (UΣ)[j, :] Yᵀ
                for (i, p) in phi.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..r {
                        acc += us[(j, c)] * yt[(c, i)];
                    }
                    *p = acc;
                }
                src.evaluate(&phi, &mut out);
                if let Some(i) = out.iter().position(|v| !v.is_finite()) {
                    return Err(DboError::NonFinite(format!(
                        "source '{}' returned {} for species {} at grid index {j}",
                        src.name(),
                        out[i],
                        i + 1
                    )));
                }
                for c in 0..r {
                    let mut acc = 0.0;
                    for (i, o) in out.iter().enumerate() {
                        acc += o * s.y[(i, c)];
                    }
                    sy[(jj, c)] = acc;
                    let w = dx * u[(j, c)];
                    for (i, o) in out.iter().enumerate() {
                        su[(i, c)] += o * w;
                    }
                }
            }
            Ok((start, sy, su))
        })
        .collect();

    let mut sy = DMatrix::<f64>::zeros(n, r);
    let mut su = DMatrix::<f64>::zeros(ns, r);
    for p in partials {
        let (start, sy_b, su_b) = p?;
        sy.rows_mut(start, sy_b.nrows()).copy_from(&sy_b);
        su += su_b;
    }
    Ok((sy, su))
}

/// Build `M(Φ)Y` and `⟨M(Φ), U⟩` for the transport model at time `t`.
///
/// Diffusion only needs the Laplacian of the `r` spatial modes: with
/// `L = g ∂²U`, `M(Φ)Y ⊃ L Σ α_Y` and `⟨M(Φ), U⟩ ⊃ α Y Σᵀ ⟨L, U⟩`.
pub fn project_model_rhs(
    s: &DboState,
    v: &VelocityField,
    diff: &DiffusivitySpec,
    src: &SourceModel,
    t: f64,
) -> Result<ProjectedRhs> {
    project_model_rhs_blocked(s, v, diff, src, t, DEFAULT_SOURCE_BLOCK)
}

pub fn project_model_rhs_blocked(
    s: &DboState,
    v: &VelocityField,
    diff: &DiffusivitySpec,
    src: &SourceModel,
    t: f64,
    block: usize,
) -> Result<ProjectedRhs> {
    let grid = *s.grid();
    grid.check_same(v.v.grid())?;
    let r = s.rank();
    let ns = s.n_species();
    if diff.n_species() != ns {
        return Err(DboError::Dimension(format!(
            "diffusivity has {} species, state has {ns}",
            diff.n_species()
        )));
    }
    src.check_species(ns)?;

    let sigma_t = s.sigma.transpose();
    let mut my = DMatrix::<f64>::zeros(grid.n_points(), r);
    let mut in_span = DMatrix::<f64>::zeros(r, r);
    let mut off_span: Option<DMatrix<f64>> = None;

    let need_conv = !v.is_zero();
    let need_diff = !diff.is_zero();
    let (du, lap) = match (need_conv, need_diff) {
        (true, true) => {
            let (a, b) = ddx_and_d2dx2(&s.u);
            (Some(a), Some(b))
        }
        (true, false) => (Some(ddx(&s.u)), None),
        (false, true) => (None, Some(d2dx2(&s.u))),
        (false, false) => (None, None),
    };

    if let Some(du) = du {
        let vv = v.v.values().column(0);
        let mut conv = du.into_values();
        for mut col in conv.column_iter_mut() {
            col.component_mul_assign(&vv);
        }
        let conv = s.u.with_values(conv)?;
        my -= conv.values() * &s.sigma;
        in_span -= &sigma_t * gram(&conv, &s.u)?;
    }

    let alpha_y = diff.alpha_y(&s.y);
    if let Some(lap) = lap {
        let mut lap = lap.into_values();
        if let Some(gv) = diff.scaling_on(&grid, t) {
            for mut col in lap.column_iter_mut() {
                col.component_mul_assign(&gv);
            }
        }
        let lap = s.u.with_values(lap)?;
        my += lap.values() * (&s.sigma * &alpha_y);
        let coeff = &sigma_t * gram(&lap, &s.u)?;
        match diff.common_value() {
            Some(a) => in_span += coeff * a,
            None => {
                let ay = DMatrix::from_fn(ns, r, |i, j| diff.alpha()[i] * s.y[(i, j)]);
                off_span = Some(ay * coeff);
            }
        }
    }

    if !src.is_none() {
        let (sy, su) = stream_source_projections(s, src, block)?;
        my += sy;
        off_span = Some(match off_span {
            Some(b) => b + su,
            None => su,
        });
    }

    let my = s.u.with_values(my)?;
    if !my.is_finite() {
        return Err(DboError::NonFinite(format!("projected right-hand side at t = {t}")));
    }
    Ok(ProjectedRhs { my, mtu: SpeciesProjection { in_span, off_span }, alpha_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{init_from_field, reconstruct};

    fn grid(n: usize) -> Grid1D {
        Grid1D::periodic_2pi(n).unwrap()
    }

    /// Naive dense `M(Φ)` at `Φ = UΣYᵀ`, column by column.
    fn dense_m(phi: &Quasimatrix, v: &VelocityField, diff: &DiffusivitySpec, src: &SourceModel) -> DMatrix<f64> {
        let n = phi.n_points();
        let ns = phi.n_cols();
        let mut m = DMatrix::zeros(n, ns);
        for i in 0..ns {
            let col = phi.column(i);
            let d1 = ddx(&col);
            let d2 = d2dx2(&col);
            for j in 0..n {
                m[(j, i)] = -v.v.values()[(j, 0)] * d1.values()[(j, 0)] + diff.alpha()[i] * d2.values()[(j, 0)];
            }
        }
        let mut out = vec![0.0; ns];
        for j in 0..n {
            let row: Vec<f64> = phi.values().row(j).iter().copied().collect();
            src.evaluate(&row, &mut out);
            for i in 0..ns {
                m[(j, i)] += out[i];
            }
        }
        m
    }

    fn test_state(n: usize, ns: usize, r: usize) -> DboState {
        let g = grid(n);
        let phi = Quasimatrix::from_fn(g, ns, |x, c| {
            let cf = c as f64;
            1.0 + 0.5 * (x + cf).sin() + 0.2 * ((2.0 + cf) * x).cos() + 0.05 * (3.0 * x * (1.0 + 0.1 * cf)).sin()
        });
        init_from_field(&phi, r).unwrap()
    }

    #[test]
    fn burgers_rhs_examples() {
        let g = grid(64);
        let c = VelocityField::new(Quasimatrix::from_fn(g, 1, |_, _| 0.7), 0.01).unwrap();
        assert!(burgers_rhs(&c).values().amax() < 1e-14);
        let s = VelocityField::new(Quasimatrix::from_fn(g, 1, |x, _| x.sin()), 0.0).unwrap();
        let out = burgers_rhs(&s);
        for j in 0..64 {
            let x = g.node(j);
            let e = (out.values()[(j, 0)] + x.sin() * x.cos()).abs();
            assert!(e < 1e-12, "{j} {e}");
        }
    }

    #[test]
    fn species_ic_is_deterministic() {
        let g = grid(32);
        let a = species_ic(20, 2.0, 7, &g).unwrap();
        let b = species_ic(20, 2.0, 7, &g).unwrap();
        assert_eq!(a.values().as_slice(), b.values().as_slice());
        let c = species_ic(20, 2.0, 8, &g).unwrap();
        assert_ne!(a.values().as_slice(), c.values().as_slice());
        assert!(species_ic(4, 0.0, 1, &g).is_err());
    }

    #[test]
    fn species_ic_large_decay_is_first_harmonic() {
        let g = grid(64);
        let phi = species_ic(6, 80.0, 3, &g).unwrap();
        let sv = phi.values().clone().svd(false, false).singular_values;
        assert!(sv[1] <= 1e-15 * sv[0]);
        // every species is a multiple of sin(x/2)
        for c in 0..6 {
            let amp = phi.values()[(16, c)] / (g.node(16) / 2.0).sin();
            for j in 0..64 {
                assert!((phi.values()[(j, c)] - amp * (g.node(j) / 2.0).sin()).abs() < 1e-13 * amp.abs().max(1.0));
            }
        }
    }

    #[test]
    fn species_ic_spectrum_decays() {
        let g = grid(512);
        let phi = species_ic(1000, 2.0, 2021, &g).unwrap();
        let sv = phi.values().clone().svd(false, false).singular_values;
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        // coefficient decay n^{-2}: the k-th singular value sits near k^{-2} of the first
        for k in [2usize, 4, 8, 16] {
            let ratio = sv[k - 1] / sv[0];
            let law = (k as f64).powi(-2);
            assert!(ratio > law / 4.0 && ratio < law * 4.0, "k={k} ratio={ratio} law={law}");
        }
        for w in sv.windows(2).take(50) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn toy_kinetics_examples() {
        let src = toy_kinetics(2.5);
        let mut out = vec![1.0; 4];
        src.evaluate(&[0.0, 3.0, 1.0, 9.0], &mut out);
        assert!(out.iter().all(|v| *v == 0.0));
        src.evaluate(&[0.4, 3.0, 1.0, 9.0], &mut out);
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0] + out[2], 0.0);
        assert_eq!(out[3], 0.0);
        assert!((out[2] - 2.5 * 0.4 * 3.0).abs() < 1e-15);
        assert!(src.check_species(2).is_err());
    }

    #[test]
    fn registry_builds_builtins() {
        let reg = SourceRegistry::default();
        assert_eq!(reg.names(), vec!["none", "toy_abc"]);
        let mut p = BTreeMap::new();
        p.insert("k".to_string(), 3.0);
        let m = reg.build("toy_abc", &p).unwrap();
        assert_eq!(m.name(), "toy_abc");
        assert_eq!(m.params()["k"], 3.0);
        assert!(reg.build("none", &BTreeMap::new()).unwrap().is_none());
        assert!(reg.build("arrhenius", &p).is_err());
    }

    #[test]
    fn projections_match_dense_assembly() {
        let (n, ns, r) = (32, 6, 3);
        let s = test_state(n, ns, r);
        let g = *s.grid();
        let v = VelocityField::new(Quasimatrix::from_fn(g, 1, |x, _| 0.3 + 0.5 * x.sin()), 0.0).unwrap();
        for (diff, src) in [
            (DiffusivitySpec::uniform(0.05, ns).unwrap(), SourceModel::none()),
            (DiffusivitySpec::c_over_sqrt_i(0.05, ns).unwrap(), SourceModel::none()),
            (DiffusivitySpec::c_over_sqrt_i(0.05, ns).unwrap(), toy_kinetics(1.7)),
        ] {
            let phi = reconstruct(&s, None).unwrap();
            let m = phi.with_values(dense_m(&phi, &v, &diff, &src)).unwrap();
            let p = project_model_rhs(&s, &v, &diff, &src, 0.0).unwrap();
            let my_ref = m.values() * &s.y;
            let mtu_ref = gram(&m, &s.u).unwrap();
            let rel_my = (p.my.values() - &my_ref).norm() / my_ref.norm();
            let rel_mtu = (p.mtu.full(&s.y) - &mtu_ref).norm() / mtu_ref.norm();
            assert!(rel_my < 1e-12, "{rel_my}");
            assert!(rel_mtu < 1e-12, "{rel_mtu}");
        }
    }

    #[test]
    fn zero_model_projects_to_zero() {
        let s = test_state(16, 4, 2);
        let p = project_model_rhs(&s, &VelocityField::zero(*s.grid()), &DiffusivitySpec::zero(4), &SourceModel::none(), 0.0)
            .unwrap();
        assert_eq!(p.my.values().amax(), 0.0);
        assert_eq!(p.mtu.full(&s.y).amax(), 0.0);
    }

    #[test]
    fn pure_advection_stays_in_species_span() {
        let s = test_state(32, 6, 3);
        let v = VelocityField::shock_forming_ic(*s.grid(), 0.01);
        let p = project_model_rhs(&s, &v, &DiffusivitySpec::zero(6), &SourceModel::none(), 0.0).unwrap();
        let mtu = p.mtu.full(&s.y);
        let perp = &mtu - &s.y * (s.y.transpose() * &mtu);
        assert!(perp.amax() < 1e-12);
        assert!(p.mtu.off_span.is_none());
    }

    #[test]
    fn alpha_y_is_symmetric_psd() {
        let s = test_state(16, 6, 3);
        let diff = DiffusivitySpec::c_over_sqrt_i(0.01, 6).unwrap();
        let ay = diff.alpha_y(&s.y);
        assert!((&ay - ay.transpose()).amax() < 1e-16);
        assert!(ay.symmetric_eigen().eigenvalues.min() >= -1e-16);
        let eq = DiffusivitySpec::uniform(0.2, 6).unwrap();
        assert_eq!(eq.alpha_y(&s.y), DMatrix::identity(3, 3) * 0.2);
    }

    #[test]
    fn source_streaming_is_block_independent() {
        let s = test_state(64, 5, 3);
        let src = toy_kinetics(0.8);
        let (sy_a, su_a) = stream_source_projections(&s, &src, 7).unwrap();
        let (sy_b, su_b) = stream_source_projections(&s, &src, 1024).unwrap();
        assert!((&sy_a - &sy_b).amax() <= 1e-12 * sy_b.amax());
        assert!((&su_a - &su_b).amax() <= 1e-12 * su_b.amax());
    }

    #[test]
    fn non_finite_source_names_grid_index() {
        struct Bad;
        impl SourceTerm for Bad {
            fn evaluate(&self, phi: &[f64], _: Option<f64>, _: Option<f64>, out: &mut [f64]) {
                out.fill(0.0);
                if phi[0] > 1.4 {
                    out[0] = f64::NAN;
                }
            }
        }
        let s = test_state(16, 4, 2);
        let src = SourceModel::new("bad", BTreeMap::new(), Arc::new(Bad));
        let err = project_model_rhs(&s, &VelocityField::zero(*s.grid()), &DiffusivitySpec::zero(4), &src, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("grid index"), "{err}");
    }

    #[test]
    fn diffusivity_validation() {
        assert!(DiffusivitySpec::new(vec![0.1, -0.2]).is_err());
        let d = DiffusivitySpec::c_over_sqrt_i(0.01, 4).unwrap();
        assert!((d.alpha()[3] - 0.005).abs() < 1e-18);
        assert!(d.common_value().is_none());
    }
}
