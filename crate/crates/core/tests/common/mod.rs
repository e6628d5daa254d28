//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use dbo_rom::diagnostics::DiagnosticsRow;
use dbo_rom::experiment::{solve_burgers, Quiet, RunObserver, RunState, Simulation, TransportModel, VelocityModel};
use dbo_rom::fom::fom_rhs;
use dbo_rom::lowrank::{dbo_rhs, init_from_field, reconstruct, tangent_residual, DboState, SkewGauge};
use dbo_rom::transport::{project_model_rhs, species_ic, toy_kinetics, DiffusivitySpec, SourceModel, VelocityField};
use dbo_rom::{Grid1D, Quasimatrix};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Orthonormal columns from modified Gram-Schmidt under weight `w`.
pub fn orthonormalize(a: &DMatrix<f64>, w: f64) -> DMatrix<f64> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let p = w * q.column(k).dot(&q.column(j));
                let qk = q.column(k).into_owned();
                q.column_mut(j).axpy(-p, &qk, 1.0);
            }
        }
        let n = (w * q.column(j).norm_squared()).sqrt();
        q.column_mut(j).scale_mut(1.0 / n);
    }
    q
}

/// Random DBO state with a well-conditioned `Σ`.
pub fn random_state(grid: Grid1D, ns: usize, r: usize, rng: &mut ChaCha8Rng) -> DboState {
    let n = grid.n_points();
    let a = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
    let u = orthonormalize(&a, grid.dx());
    let y = orthonormalize(&DMatrix::from_fn(ns, r, |_, _| rng.random_range(-1.0..1.0)), 1.0);
    let sigma = DMatrix::from_fn(r, r, |i, j| if i == j { 2.0 + (r - i) as f64 } else { 0.0 })
        + DMatrix::from_fn(r, r, |_, _| rng.random_range(-0.4..0.4));
    DboState::new(Quasimatrix::new(grid, u).unwrap(), sigma, y, 0.0).unwrap()
}

/// Smooth random periodic field from a few Fourier modes.
pub fn random_smooth_field(grid: Grid1D, modes: usize, rng: &mut ChaCha8Rng) -> Quasimatrix {
    let c: Vec<(f64, f64)> =
        (0..=modes).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let k0 = 2.0 * std::f64::consts::PI / grid.length();
    Quasimatrix::from_fn(grid, 1, |x, _| {
        c.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * k0 * x).cos() + b * (k as f64 * k0 * x).sin()).sum()
    })
}

/// `M(UΣYᵀ)` assembled at full order.
pub fn dense_m(s: &DboState, v: &VelocityField, diff: &DiffusivitySpec, src: &SourceModel) -> DMatrix<f64> {
    let phi = reconstruct(s, None).unwrap();
    fom_rhs(&phi, v, diff, src, s.t).unwrap().into_values()
}

/// Minimizer of `‖d(UΣYᵀ)/dt − M‖_F` over `(dU, dΣ, dY)` subject to
/// `⟨U, dU⟩ = 0` and `Yᵀ dY = 0`, by explicit null-space least squares.
pub fn tangent_minimizer(s: &DboState, m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = s.u.n_points();
    let r = s.rank();
    let ns = s.n_species();
    let dx = s.grid().dx();
    let w = dx.sqrt();
    let u = s.u.values();
    let (nu, nsig, ny) = (n * r, r * r, ns * r);
    let p = nu + nsig + ny;
    let split = |v: &[f64]| {
        (
            DMatrix::from_column_slice(n, r, &v[..nu]),
            DMatrix::from_column_slice(r, r, &v[nu..nu + nsig]),
            DMatrix::from_column_slice(ns, r, &v[nu + nsig..]),
        )
    };
    let apply = |v: &[f64]| -> DMatrix<f64> {
        let (du, ds, dy) = split(v);
        (&du * &s.sigma * s.y.transpose() + u * &ds * s.y.transpose() + u * &s.sigma * dy.transpose()) * w
    };
    let mut a = DMatrix::zeros(n * ns, p);
    let mut c = DMatrix::zeros(2 * r * r, p);
    let mut e = vec![0.0; p];
    for k in 0..p {
        e[k] = 1.0;
        let img = apply(&e);
        a.column_mut(k).copy_from_slice(img.as_slice());
        let (du, _, dy) = split(&e);
        let cu = u.transpose() * &du * dx;
        let cy = s.y.transpose() * &dy;
        for (i, v) in cu.iter().chain(cy.iter()).enumerate() {
            c[(i, k)] = *v;
        }
        e[k] = 0.0;
    }
    // null space of C from the eigenvectors of CᵀC with vanishing eigenvalue
    let eig = SymmetricEigen::new(c.transpose() * &c);
    let top = eig.eigenvalues.amax();
    let null: Vec<_> = (0..p)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * top)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    assert_eq!(null.len(), p - 2 * r * r, "constraint rank");
    let z = DMatrix::from_columns(&null);
    let az = &a * &z;
    let b = DMatrix::from_column_slice(n * ns, 1, (m * w).as_slice());
    let q = (az.transpose() * &az).cholesky().expect("tangent map is injective").solve(&(az.transpose() * b));
    let sol = z * q;
    split(sol.as_slice())
}

/// Relative Frobenius difference `‖a − b‖ / ‖b‖`.
pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Largest magnitude difference between two periodic index positions.
pub fn periodic_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Burgers-only run sampled on `grid`.
pub fn burgers_at(grid: Grid1D, nu: f64, dt: f64, t: f64) -> DMatrix<f64> {
    solve_burgers(grid, nu, dt, t).unwrap().v.into_values()
}

/// Full-order field at `t_final` for a given step.
pub fn fom_solution(model: &TransportModel, grid: Grid1D, phi0: &Quasimatrix, dt: f64, t_final: f64) -> DMatrix<f64> {
    let start = RunState::initial(model, grid, Some(phi0), &[], true, 0.0).unwrap();
    let sim = Simulation::new(model.clone(), dt).with_strides(usize::MAX, usize::MAX);
    sim.run(start, t_final, &mut Quiet).unwrap().final_state.fom.unwrap().phi.into_values()
}

pub fn passive_model(nu: f64, diffusivity: DiffusivitySpec) -> TransportModel {
    TransportModel { velocity: VelocityModel::Burgers { nu }, diffusivity, source: SourceModel::none() }
}

pub fn zero_gauge(r: usize) -> SkewGauge {
    SkewGauge::zero(r)
}

/// Worst discrepancies seen by the gauge dual run.
#[derive(Debug, Clone, Copy)]
pub struct GaugeDiscrepancy {
    /// `‖U_aΣ_aY_aᵀ − U_bΣ_bY_bᵀ‖ / ‖Σ_a‖` over all outputs.
    pub reconstruction: f64,
    /// `max(‖U_b − U_a R_U‖, ‖Y_b − Y_a R_Y‖)` over all outputs.
    pub bases: f64,
    pub outputs: usize,
}

/// Integrates one state under the zero gauge and a copy under a random skew
/// gauge, together with the rotation ODEs linking them, and records how far
/// the two decompositions drift apart. No reorthonormalization is applied.
pub fn gauge_dual_run(n: usize, ns: usize, r: usize, t_final: f64, seed: u64) -> GaugeDiscrepancy {
    use dbo_rom::grid::frobenius_norm;
    use dbo_rom::lowrank::{dbo_rhs, gauge_transport_rhs, init_from_field};
    use dbo_rom::timeint::{integrate, CompositeState};
    use dbo_rom::transport::{burgers_rhs, project_model_rhs, species_ic};

    let grid = Grid1D::periodic_2pi(n).unwrap();
    let nu = 0.05;
    let diff = DiffusivitySpec::c_over_sqrt_i(0.05, ns).unwrap();
    let src = SourceModel::none();
    let gauge_a = SkewGauge::zero(r);
    let gauge_b = SkewGauge::random(r, 0.5, seed);
    let s0 = init_from_field(&species_ic(ns, 2.0, seed, &grid).unwrap(), r).unwrap();
    let v0 = VelocityField::shock_forming_ic(grid, nu);

    let cs = CompositeState::new()
        .with("v", v0.v.values().clone())
        .with("Ua", s0.u.values().clone())
        .with("Sa", s0.sigma.clone())
        .with("Ya", s0.y.clone())
        .with("Ub", s0.u.values().clone())
        .with("Sb", s0.sigma.clone())
        .with("Yb", s0.y.clone())
        .with("RU", DMatrix::identity(r, r))
        .with("RY", DMatrix::identity(r, r));
    let state = |cs: &CompositeState, tag: &str, t: f64| {
        DboState {
            u: Quasimatrix::new(grid, cs.get(&format!("U{tag}")).unwrap().clone()).unwrap(),
            sigma: cs.get(&format!("S{tag}")).unwrap().clone(),
            y: cs.get(&format!("Y{tag}")).unwrap().clone(),
            t,
        }
    };
    let rhs = |t: f64, cs: &CompositeState| {
        let v = VelocityField { v: Quasimatrix::new(grid, cs.require("v")?.clone())?, nu };
        let mut out = CompositeState::new().with("v", burgers_rhs(&v).into_values());
        for (tag, gauge) in [("a", &gauge_a), ("b", &gauge_b)] {
            let s = state(cs, tag, t);
            let p = project_model_rhs(&s, &v, &diff, &src, t)?;
            let d = dbo_rhs(&s, &p.my, &p.mtu, gauge)?;
            out.push(format!("U{tag}"), d.du.into_values());
            out.push(format!("S{tag}"), d.dsigma);
            out.push(format!("Y{tag}"), d.dy);
        }
        let (dru, dry) = gauge_transport_rhs(cs.require("RU")?, cs.require("RY")?, &gauge_a, &gauge_b);
        Ok(out.with("RU", dru).with("RY", dry))
    };
    let mut worst = GaugeDiscrepancy { reconstruction: 0.0, bases: 0.0, outputs: 0 };
    let observer = |_: usize, t: f64, cs: &CompositeState| {
        let (a, b) = (state(cs, "a", t), state(cs, "b", t));
        let ra = reconstruct(&a, None)?;
        let rb = reconstruct(&b, None)?;
        let diff = frobenius_norm(&ra.with_values(ra.values() - rb.values())?);
        worst.reconstruction = worst.reconstruction.max(diff / a.sigma.norm());
        let ru = cs.require("RU")?;
        let ry = cs.require("RY")?;
        let du = (b.u.values() - a.u.values() * ru).norm() * grid.dx().sqrt();
        let dy = (&b.y - &a.y * ry).norm();
        worst.bases = worst.bases.max(du).max(dy);
        worst.outputs += 1;
        Ok(())
    };
    integrate(cs, 0.0, 1.0 / 256.0, t_final, 16, rhs, |_, _| Ok(()), observer).unwrap();
    worst
}

/// Random small instance: returns the relative mismatch between the
/// library's DBO derivative and [`tangent_minimizer`], and the library's own
/// tangent residual.
pub fn tangent_instance(seed: u64, ns: usize, r: usize, with_source: bool) -> (f64, f64) {
    let g = Grid1D::periodic_2pi(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_state(g, ns, r, &mut rng);
    let v = VelocityField::new(random_smooth_field(g, 3, &mut rng), 0.0).unwrap();
    let diff = DiffusivitySpec::new((0..ns).map(|_| rng.random_range(0.0..0.2)).collect()).unwrap();
    let src = if with_source { toy_kinetics(rng.random_range(0.1..2.0)) } else { SourceModel::none() };

    let p = project_model_rhs(&s, &v, &diff, &src, 0.0).unwrap();
    let d = dbo_rhs(&s, &p.my, &p.mtu, &SkewGauge::zero(r)).unwrap();
    let m = dense_m(&s, &v, &diff, &src);
    let (du, ds, dy) = tangent_minimizer(&s, &m);

    let assembled = |du: &DMatrix<f64>, ds: &DMatrix<f64>, dy: &DMatrix<f64>| {
        du * &s.sigma * s.y.transpose() + s.u.values() * ds * s.y.transpose() + s.u.values() * &s.sigma * dy.transpose()
    };
    let phidot = assembled(d.du.values(), &d.dsigma, &d.dy);
    let oracle = assembled(&du, &ds, &dy);
    let parts = rel(d.du.values(), &du).max(rel(&d.dsigma, &ds)).max(if dy.norm() > 1e-14 { rel(&d.dy, &dy) } else { d.dy.norm() });
    (rel(&phidot, &oracle).max(parts), tangent_residual(&s, &d, &p.my, &p.mtu).unwrap())
}

/// Rank-`r` field: the truncated SVD of a spectral species field, expanded.
pub fn rank_r_field(grid: Grid1D, ns: usize, r: usize) -> Quasimatrix {
    let phi = species_ic(ns, 2.0, 21, &grid).unwrap();
    reconstruct(&init_from_field(&phi, r).unwrap(), None).unwrap()
}

#[derive(Default)]
struct YWatch {
    y0: Option<DMatrix<f64>>,
    outputs: usize,
    max_change: f64,
}

impl RunObserver for YWatch {
    fn on_output(&mut self, _: usize, state: &RunState, _: &[DiagnosticsRow]) -> dbo_rom::Result<()> {
        let y = &state.dbo[0].y;
        let y0 = self.y0.get_or_insert_with(|| y.clone());
        // columns may only flip sign
        for j in 0..y.ncols() {
            let same = y.column(j) == y0.column(j) || y.column(j) == -y0.column(j);
            if !same {
                self.max_change = self.max_change.max((y.column(j) - y0.column(j)).amax());
            }
        }
        self.outputs += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExactnessReport {
    /// Largest DBO-vs-full-order relative error over all steps.
    pub max_error: f64,
    /// Largest entry change of `Y` (zero when bitwise constant up to sign).
    pub y_change: f64,
    pub outputs: usize,
}

/// Rank-4 data with equal diffusivity and no source, checked every step.
pub fn rank_r_exactness() -> ExactnessReport {
    let grid = Grid1D::periodic_2pi(128).unwrap();
    let (ns, r) = (40, 4);
    let phi0 = rank_r_field(grid, ns, r);
    let model = passive_model(0.05, DiffusivitySpec::uniform(0.01, ns).unwrap());
    let start = RunState::initial(&model, grid, Some(&phi0), &[r], true, 0.0).unwrap();
    let mut watch = YWatch::default();
    let sim = Simulation::new(model, 1.0 / 256.0).with_strides(1, usize::MAX);
    let summary = sim.run(start, 2.0, &mut watch).unwrap();
    let rows = summary.diagnostics_for(r).unwrap();
    let max_error = rows.iter().map(|row| row.relative_error.unwrap()).fold(0.0, f64::max);
    ExactnessReport { max_error, y_change: watch.max_change, outputs: watch.outputs }
}

/// Largest `‖(I − YYᵀ)·MᵀU‖ / ‖MᵀU‖` under pure advection, with `M`
/// assembled densely at every step; returns it with the number of checks.
pub fn advection_span_defect() -> (f64, usize) {
    struct Check {
        model: TransportModel,
        worst: f64,
        steps: usize,
    }
    impl RunObserver for Check {
        fn on_output(&mut self, _: usize, st: &RunState, _: &[DiagnosticsRow]) -> dbo_rom::Result<()> {
            let s = &st.dbo[0];
            let m = dense_m(s, &st.velocity, &self.model.diffusivity, &self.model.source);
            let mtu = m.transpose() * s.u.values() * s.grid().dx();
            let perp = &mtu - &s.y * (s.y.transpose() * &mtu);
            self.worst = self.worst.max(perp.norm() / mtu.norm());
            self.steps += 1;
            Ok(())
        }
    }
    let grid = Grid1D::periodic_2pi(64).unwrap();
    let ns = 10;
    let phi0 = species_ic(ns, 2.0, 5, &grid).unwrap();
    let model = passive_model(0.05, DiffusivitySpec::zero(ns));
    let start = RunState::initial(&model, grid, Some(&phi0), &[3], false, 0.0).unwrap();
    let mut check = Check { model: model.clone(), worst: 0.0, steps: 0 };
    Simulation::new(model, 1.0 / 256.0).with_strides(1, usize::MAX).run(start, 1.0, &mut check).unwrap();
    (check.worst, check.steps)
}
