//! Co-integrated runs: any number of DBO ranks, an optional full-order
//! reference and the Burgers velocity share one RK4 state, so every solution
//! sees identical velocity stages and time levels.

use nalgebra::DMatrix;

use crate::diagnostics::DiagnosticsRow;
use crate::error::{DboError, Result};
use crate::fom::{compare_spectra, fom_rhs, ipca, FomState};
use crate::grid::{Grid1D, Quasimatrix};
use crate::lowrank::{
    canonical_form, dbo_rhs, init_from_field, relative_error, reorthonormalize_if_drifted, tangent_residual,
    DboState, SkewGauge, REORTH_SKIP_TOL,
};
use crate::timeint::{integrate, CompositeState};
use crate::transport::{burgers_rhs, project_model_rhs, DiffusivitySpec, SourceModel, VelocityField};

/// How the advecting velocity is provided.
#[derive(Debug, Clone)]
pub enum VelocityModel {
    /// Viscous Burgers from the shock-forming initial condition.
    Burgers { nu: f64 },
    Zero,
    /// A fixed field, constant in time.
    Frozen(Quasimatrix),
}

/// `M(Φ) = −v ∂Φ + α g ∂²Φ + S(Φ)`.
#[derive(Debug, Clone)]
pub struct TransportModel {
    pub velocity: VelocityModel,
    pub diffusivity: DiffusivitySpec,
    pub source: SourceModel,
}

impl TransportModel {
    pub fn initial_velocity(&self, grid: Grid1D) -> Result<VelocityField> {
        match &self.velocity {
            VelocityModel::Burgers { nu } => Ok(VelocityField::shock_forming_ic(grid, *nu)),
            VelocityModel::Zero => Ok(VelocityField::zero(grid)),
            VelocityModel::Frozen(v) => {
                grid.check_same(v.grid())?;
                VelocityField::new(v.clone(), 0.0)
            }
        }
    }

    fn evolves_velocity(&self) -> bool {
        matches!(self.velocity, VelocityModel::Burgers { .. })
    }
}

/// Everything a run carries at one time level.
#[derive(Debug, Clone)]
pub struct RunState {
    pub t: f64,
    pub velocity: VelocityField,
    pub dbo: Vec<DboState>,
    pub fom: Option<FomState>,
}

impl RunState {
    /// Fresh start at `t0`: each rank is the truncated SVD of `phi0`.
    pub fn initial(
        model: &TransportModel,
        grid: Grid1D,
        phi0: Option<&Quasimatrix>,
        ranks: &[usize],
        full_order: bool,
        t0: f64,
    ) -> Result<Self> {
        let velocity = model.initial_velocity(grid)?;
        let needs_field = full_order || !ranks.is_empty();
        let phi0 = match phi0 {
            Some(p) => {
                grid.check_same(p.grid())?;
                Some(p)
            }
            None if needs_field => {
                return Err(DboError::InvalidArgument("species runs need an initial field".into()));
            }
            None => None,
        };
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ranks.len() {
            return Err(DboError::InvalidArgument("ranks must be distinct".into()));
        }
        let mut dbo = Vec::with_capacity(ranks.len());
        for &r in ranks {
            let mut s = init_from_field(phi0.expect("checked above"), r)?;
            s.t = t0;
            dbo.push(s);
        }
        let fom = if full_order { Some(FomState::new(phi0.expect("checked above").clone(), t0)?) } else { None };
        Ok(Self { t: t0, velocity, dbo, fom })
    }

    pub fn grid(&self) -> &Grid1D {
        self.velocity.v.grid()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.dbo.iter().map(DboState::rank).collect()
    }

    /// The DBO state with rank `r`.
    pub fn rank(&self, r: usize) -> Option<&DboState> {
        self.dbo.iter().find(|s| s.rank() == r)
    }

    fn pack(&self, evolve_velocity: bool) -> CompositeState {
        let mut cs = CompositeState::new();
        if evolve_velocity {
            cs.push("v", self.velocity.v.values().clone());
        }
        for s in &self.dbo {
            let r = s.rank();
            cs.push(format!("U{r}"), s.u.values().clone());
            cs.push(format!("Sigma{r}"), s.sigma.clone());
            cs.push(format!("Y{r}"), s.y.clone());
        }
        if let Some(f) = &self.fom {
            cs.push("phi", f.phi.values().clone());
        }
        cs
    }

    /// Rebuild from a packed state using `self` for metadata.
    fn unpack(&self, cs: &CompositeState, t: f64, evolve_velocity: bool) -> Result<RunState> {
        let grid = *self.grid();
        let velocity = if evolve_velocity {
            VelocityField { v: Quasimatrix::new(grid, cs.require("v")?.clone())?, nu: self.velocity.nu }
        } else {
            self.velocity.clone()
        };
        let dbo = self
            .dbo
            .iter()
            .map(|s| unpack_dbo(cs, grid, s.rank(), t))
            .collect::<Result<Vec<_>>>()?;
        let fom = match &self.fom {
            Some(_) => Some(FomState { phi: Quasimatrix::new(grid, cs.require("phi")?.clone())?, t }),
            None => None,
        };
        Ok(RunState { t, velocity, dbo, fom })
    }
}

fn unpack_dbo(cs: &CompositeState, grid: Grid1D, r: usize, t: f64) -> Result<DboState> {
    Ok(DboState {
        u: Quasimatrix::new(grid, cs.require(&format!("U{r}"))?.clone())?,
        sigma: cs.require(&format!("Sigma{r}"))?.clone(),
        y: cs.require(&format!("Y{r}"))?.clone(),
        t,
    })
}

/// One I-PCA comparison for one rank.
#[derive(Debug, Clone)]
pub struct RankComparison {
    pub rank: usize,
    /// DBO relative error against the full-order field.
    pub dbo_error: f64,
    /// Relative error of the rank-`r` truncated I-PCA.
    pub ipca_error: f64,
    pub sigma_tilde: Vec<f64>,
    pub sigma_gaps: Vec<f64>,
    pub principal_angles: Vec<f64>,
}

/// I-PCA of the full-order field at one time.
#[derive(Debug, Clone)]
pub struct IpcaRecord {
    pub t: f64,
    pub singular_values: Vec<f64>,
    pub ranks: Vec<RankComparison>,
}

/// Hooks invoked while a run advances.
pub trait RunObserver {
    /// Called at step 0 and every output stride with one row per rank.
    fn on_output(&mut self, _step: usize, _state: &RunState, _rows: &[DiagnosticsRow]) -> Result<()> {
        Ok(())
    }

    /// Called at every I-PCA stride when a full-order reference is present.
    fn on_ipca(&mut self, _record: &IpcaRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Quiet;

impl RunObserver for Quiet {}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: RunState,
    pub steps: usize,
    /// Diagnostics rows per rank, in the order of `final_state.dbo`.
    pub diagnostics: Vec<Vec<DiagnosticsRow>>,
    pub ipca: Vec<IpcaRecord>,
    /// Largest post-hook `‖gram(U,U) − I‖_F` over every step, per rank.
    pub max_orth_u: Vec<f64>,
    /// Largest post-hook `‖YᵀY − I‖_F` over every step, per rank.
    pub max_orth_y: Vec<f64>,
}

impl RunSummary {
    pub fn diagnostics_for(&self, r: usize) -> Option<&[DiagnosticsRow]> {
        let i = self.final_state.dbo.iter().position(|s| s.rank() == r)?;
        Some(&self.diagnostics[i])
    }
}

/// Stepping parameters and per-rank gauges.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: TransportModel,
    pub dt: f64,
    pub output_stride: usize,
    pub ipca_stride: usize,
    /// Gauge per rank; ranks not listed use the zero gauge.
    pub gauges: Vec<(usize, SkewGauge)>,
    /// Orthonormality defect that triggers the post-step QR; `None` disables it.
    pub reorth_tol: Option<f64>,
}

impl Simulation {
    pub fn new(model: TransportModel, dt: f64) -> Self {
        Self { model, dt, output_stride: 16, ipca_stride: 16, gauges: Vec::new(), reorth_tol: Some(REORTH_SKIP_TOL) }
    }

    pub fn with_strides(mut self, output: usize, ipca: usize) -> Self {
        self.output_stride = output.max(1);
        self.ipca_stride = ipca.max(1);
        self
    }

    pub fn with_gauge(mut self, r: usize, gauge: SkewGauge) -> Self {
        self.gauges.retain(|(k, _)| *k != r);
        self.gauges.push((r, gauge));
        self
    }

    pub fn with_reorth(mut self, tol: Option<f64>) -> Self {
        self.reorth_tol = tol;
        self
    }

    fn gauge(&self, r: usize) -> SkewGauge {
        self.gauges.iter().find(|(k, _)| *k == r).map_or_else(|| SkewGauge::zero(r), |(_, g)| g.clone())
    }

    /// Right-hand side of every block in `state`.
    pub fn rhs(&self, state: &RunState) -> Result<RunState> {
        let t = state.t;
        let velocity = if self.model.evolves_velocity() {
            VelocityField { v: burgers_rhs(&state.velocity), nu: state.velocity.nu }
        } else {
            VelocityField::zero(*state.grid())
        };
        let dbo = state
            .dbo
            .iter()
            .map(|s| {
                let p = project_model_rhs(s, &state.velocity, &self.model.diffusivity, &self.model.source, t)?;
                let d = dbo_rhs(s, &p.my, &p.mtu, &self.gauge(s.rank()))?;
                Ok(DboState { u: d.du, sigma: d.dsigma, y: d.dy, t })
            })
            .collect::<Result<Vec<_>>>()?;
        let fom = match &state.fom {
            Some(f) => Some(FomState {
                phi: fom_rhs(&f.phi, &state.velocity, &self.model.diffusivity, &self.model.source, t)?,
                t,
            }),
            None => None,
        };
        Ok(RunState { t, velocity, dbo, fom })
    }

    /// Diagnostics row for one DBO state, measured against `fom` when given.
    pub fn diagnostics_row(
        &self,
        s: &DboState,
        velocity: &VelocityField,
        fom: Option<&FomState>,
    ) -> Result<DiagnosticsRow> {
        let p = project_model_rhs(s, velocity, &self.model.diffusivity, &self.model.source, s.t)?;
        let d = dbo_rhs(s, &p.my, &p.mtu, &self.gauge(s.rank()))?;
        let relative_error = match fom {
            Some(f) => Some(relative_error(s, &f.phi)?),
            None => None,
        };
        Ok(DiagnosticsRow {
            t: s.t,
            sigma_tilde: canonical_form(s).sigma_tilde.iter().copied().collect(),
            relative_error,
            orth_u: s.orthonormality_u(),
            orth_y: s.orthonormality_y(),
            opt_residual: tangent_residual(s, &d, &p.my, &p.mtu)?,
            sigma_condition: d.sigma_condition,
        })
    }

    fn ipca_record(&self, state: &RunState) -> Result<Option<IpcaRecord>> {
        let Some(f) = &state.fom else { return Ok(None) };
        let res = ipca(f);
        let ranks = state
            .dbo
            .iter()
            .map(|s| {
                let r = s.rank();
                let cmp = compare_spectra(s, &res, r, 0.5 * self.dt)?;
                Ok(RankComparison {
                    rank: r,
                    dbo_error: relative_error(s, &f.phi)?,
                    ipca_error: res.truncation_error(r),
                    sigma_tilde: canonical_form(s).sigma_tilde.iter().copied().collect(),
                    sigma_gaps: cmp.gaps,
                    principal_angles: cmp.principal_angles,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(IpcaRecord { t: state.t, singular_values: res.singular_values.iter().copied().collect(), ranks }))
    }

    /// March `start` to `t_final`.
    pub fn run(&self, start: RunState, t_final: f64, observer: &mut dyn RunObserver) -> Result<RunSummary> {
        let evolve_v = self.model.evolves_velocity();
        let template = start.clone();
        let nr = start.dbo.len();
        let mut diagnostics: Vec<Vec<DiagnosticsRow>> = vec![Vec::new(); nr];
        let mut ipca_records = Vec::new();
        let mut max_orth_u: Vec<f64> = start.dbo.iter().map(DboState::orthonormality_u).collect();
        let mut max_orth_y: Vec<f64> = start.dbo.iter().map(DboState::orthonormality_y).collect();
        let t0 = start.t;

        let rhs = |t: f64, cs: &CompositeState| -> Result<CompositeState> {
            let st = template.unpack(cs, t, evolve_v)?;
            Ok(self.rhs(&st)?.pack(evolve_v))
        };
        let post = |t: f64, cs: &mut CompositeState| -> Result<()> {
            let grid = *template.grid();
            for (k, s) in template.dbo.iter().enumerate() {
                let r = s.rank();
                let mut st = unpack_dbo(cs, grid, r, t)?;
                if let Some(tol) = self.reorth_tol {
                    st = reorthonormalize_if_drifted(&st, tol)?;
                    cs.set(&format!("U{r}"), st.u.values().clone())?;
                    cs.set(&format!("Sigma{r}"), st.sigma.clone())?;
                    cs.set(&format!("Y{r}"), st.y.clone())?;
                }
                max_orth_u[k] = max_orth_u[k].max(st.orthonormality_u());
                max_orth_y[k] = max_orth_y[k].max(st.orthonormality_y());
            }
            Ok(())
        };
        let observe = |step: usize, t: f64, cs: &CompositeState| -> Result<()> {
            let want_output = step % self.output_stride == 0;
            let want_ipca = template.fom.is_some() && step % self.ipca_stride == 0;
            if !want_output && !want_ipca {
                return Ok(());
            }
            let st = template.unpack(cs, t, evolve_v)?;
            if want_output {
                let rows = st
                    .dbo
                    .iter()
                    .map(|s| self.diagnostics_row(s, &st.velocity, st.fom.as_ref()))
                    .collect::<Result<Vec<_>>>()?;
                observer.on_output(step, &st, &rows)?;
                for (k, row) in rows.into_iter().enumerate() {
                    diagnostics[k].push(row);
                }
            }
            if want_ipca {
                if let Some(rec) = self.ipca_record(&st)? {
                    observer.on_ipca(&rec)?;
                    ipca_records.push(rec);
                }
            }
            Ok(())
        };

        let out = integrate(start.pack(evolve_v), t0, self.dt, t_final, 1, rhs, post, observe)?;
        let final_state = template.unpack(&out.state, out.t, evolve_v)?;
        Ok(RunSummary {
            final_state,
            steps: out.steps,
            diagnostics,
            ipca: ipca_records,
            max_orth_u,
            max_orth_y,
        })
    }
}

/// Burgers velocity alone, marched from the shock-forming start to `t_final`.
pub fn solve_burgers(grid: Grid1D, nu: f64, dt: f64, t_final: f64) -> Result<VelocityField> {
    let model = TransportModel {
        velocity: VelocityModel::Burgers { nu },
        diffusivity: DiffusivitySpec::zero(0),
        source: SourceModel::none(),
    };
    let start = RunState::initial(&model, grid, None, &[], false, 0.0)?;
    let sim = Simulation::new(model, dt).with_strides(usize::MAX, usize::MAX);
    Ok(sim.run(start, t_final, &mut Quiet)?.final_state.velocity)
}

/// Max-norm of `a − b` relative to the max-norm of `b`.
pub fn relative_max_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
