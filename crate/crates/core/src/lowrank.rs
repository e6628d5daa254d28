//! The DBO triplet `Φ ≈ U Σ Yᵀ` and its evolution.
//!
//! `U` holds orthonormal spatial modes (under the grid inner product), `Y`
//! orthonormal species modes (Euclidean), and `Σ` the `r × r` factor of the
//! low-rank species correlation `C = Σ Σᵀ`. The time derivative of the triplet
//! is the constrained least-squares fit of `d(UΣYᵀ)/dt` to the transport
//! right-hand side `M(Φ)`; the skew-symmetric gauge `(φ, θ)` fixes the
//! in-subspace rotation freedom.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DboError, Result};
use crate::grid::{frobenius_norm, gram, Grid1D, Quasimatrix};

/// Orthonormality tolerance for `U` and `Y`.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Singular values of `Σ` below `SIGMA_CUTOFF · σ_max` are replaced by this floor.
pub const SIGMA_CUTOFF: f64 = 1e-12;

/// Condition number above which `Σ` inversion is reported as ill-conditioned.
pub const SIGMA_CONDITION_CAP: f64 = 1e12;

/// Post-step reorthonormalization is skipped for a factor whose
/// `max |gram − I|` is already at or below this level.
pub const REORTH_SKIP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DboState {
    pub u: Quasimatrix,
    pub sigma: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub t: f64,
}

impl DboState {
    pub fn new(u: Quasimatrix, sigma: DMatrix<f64>, y: DMatrix<f64>, t: f64) -> Result<Self> {
        let r = u.n_cols();
        if sigma.shape() != (r, r) {
            return Err(DboError::Dimension(format!("Sigma is {:?}, expected ({r}, {r})", sigma.shape())));
        }
        if y.ncols() != r {
            return Err(DboError::Dimension(format!("Y has {} columns, expected {r}", y.ncols())));
        }
        if r == 0 || r > y.nrows() || r > u.n_points() {
            return Err(DboError::InvalidArgument(format!(
                "rank {r} must satisfy 1 <= r <= min(N={}, n_s={})",
                u.n_points(),
                y.nrows()
            )));
        }
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(DboError::NonFinite("Sigma".into()));
        }
        Ok(Self { u, sigma, y, t })
    }

    pub fn rank(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn n_species(&self) -> usize {
        self.y.nrows()
    }

    pub fn grid(&self) -> &Grid1D {
        self.u.grid()
    }

    /// `‖gram(U,U) − I‖_F`.
    pub fn orthonormality_u(&self) -> f64 {
        let r = self.rank();
        (gram(&self.u, &self.u).expect("same grid") - DMatrix::identity(r, r)).norm()
    }

    /// `‖YᵀY − I‖_F`.
    pub fn orthonormality_y(&self) -> f64 {
        let r = self.rank();
        (self.y.transpose() * &self.y - DMatrix::identity(r, r)).norm()
    }

    /// `U Σ` as an `N × r` array.
    pub fn u_sigma(&self) -> DMatrix<f64> {
        self.u.values() * &self.sigma
    }
}

/// Skew-symmetric gauge matrices `φ` (spatial) and `θ` (species).
#[derive(Debug, Clone, PartialEq)]
pub struct SkewGauge {
    phi: DMatrix<f64>,
    theta: DMatrix<f64>,
}

impl SkewGauge {
    /// The dynamically orthogonal choice `φ = θ = 0`.
    pub fn zero(r: usize) -> Self {
        Self { phi: DMatrix::zeros(r, r), theta: DMatrix::zeros(r, r) }
    }

    /// Skew parts `(A − Aᵀ)/2` and `(B − Bᵀ)/2` of arbitrary square matrices.
    pub fn from_general(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.shape() != b.shape() {
            return Err(DboError::Dimension("gauge generators must be square and equal-sized".into()));
        }
        Ok(Self { phi: skew_part(a), theta: skew_part(b) })
    }

    /// Random skew gauge with entries of magnitude at most `scale`.
    pub fn random(r: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(r, r, |_, _| scale * rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(r, r, |_, _| scale * rng.random_range(-1.0..1.0));
        Self { phi: skew_part(&a), theta: skew_part(&b) }
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn is_zero(&self) -> bool {
        self.phi.iter().chain(self.theta.iter()).all(|v| *v == 0.0)
    }
}

fn skew_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a - a.transpose()) * 0.5
}

/// The DBO triplet rotated so that `Σ` becomes diagonal and ranked.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub u_tilde: Quasimatrix,
    pub sigma_tilde: DVector<f64>,
    pub y_tilde: DMatrix<f64>,
    pub r_u: DMatrix<f64>,
    pub r_y: DMatrix<f64>,
}

impl CanonicalForm {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = self.u_tilde.values() * DMatrix::from_diagonal(&self.sigma_tilde);
        scaled * self.y_tilde.transpose()
    }
}

/// `M(Φ)ᵀ`-projection onto the spatial modes, `⟨M(Φ), U⟩ ∈ ℝ^{n_s×r}`, held as
/// `Y · in_span + off_span`.
///
/// Terms known analytically to lie in `span(Y)` (convection, and diffusion when
/// every species shares one diffusivity) are kept as the `r × r` coefficient
/// `in_span`, so the species-mode projector annihilates them exactly rather
/// than to roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesProjection {
    pub in_span: DMatrix<f64>,
    pub off_span: Option<DMatrix<f64>>,
}

impl SpeciesProjection {
    pub fn from_full(mtu: DMatrix<f64>) -> Self {
        let r = mtu.ncols();
        Self { in_span: DMatrix::zeros(r, r), off_span: Some(mtu) }
    }

    /// Materialize `⟨M(Φ), U⟩`.
    pub fn full(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = y * &self.in_span;
        if let Some(b) = &self.off_span {
            out += b;
        }
        out
    }
}

impl From<DMatrix<f64>> for SpeciesProjection {
    fn from(mtu: DMatrix<f64>) -> Self {
        Self::from_full(mtu)
    }
}

/// Regularized inverse of `Σ`.
#[derive(Debug, Clone)]
pub struct SigmaInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
    pub regularized: bool,
}

/// Thin SVD `A = U diag(σ) Vᵀ` with a reconstruction check.
///
/// The bidiagonal QR iteration occasionally returns factors that do not
/// reproduce `A` on matrices with clustered spectra. When the residual exceeds
/// `1e-10 ‖A‖` the factorization is retried on `Aᵀ` and then with a tighter
/// convergence threshold; the most accurate attempt is returned.
pub fn checked_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    type Factors = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);
    // max_niter = 0 iterates to convergence, so try_svd always succeeds
    let direct = |m: DMatrix<f64>, eps: f64| -> Factors {
        let d = m.try_svd(true, true, eps, 0).expect("unbounded iteration");
        (d.u.expect("left vectors requested"), d.singular_values, d.v_t.expect("right vectors requested"))
    };
    let attempts: [&dyn Fn() -> Factors; 3] = [
        &|| direct(a.clone(), f64::EPSILON),
        &|| {
            let (u, s, vt) = direct(a.transpose(), f64::EPSILON);
            (vt.transpose(), s, u.transpose())
        },
        &|| direct(a.clone(), 1e-2 * f64::EPSILON),
    ];
    let tol = 1e-10 * a.norm();
    let mut best: Option<(f64, Factors)> = None;
    for attempt in attempts {
        let f = attempt();
        let e = (&f.0 * DMatrix::from_diagonal(&f.1) * &f.2 - a).norm();
        if e <= tol {
            return f;
        }
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, f));
        }
    }
    let (e, f) = best.expect("at least one attempt");
    log::warn!("SVD residual {e:.3e} exceeds {tol:.3e}");
    f
}

/// SVD-based pseudo-inverse: singular values below `SIGMA_CUTOFF · σ_max` are
/// replaced by that floor before inversion.
pub fn sigma_pseudo_inverse(sigma: &DMatrix<f64>) -> SigmaInverse {
    let r = sigma.nrows();
    let (w, s, vt) = checked_svd(sigma);
    let s = &s;
    let smax = s.max();
    let smin = s.min();
    if smax == 0.0 {
        return SigmaInverse { inverse: DMatrix::zeros(r, r), condition: f64::INFINITY, regularized: true };
    }
    let floor = SIGMA_CUTOFF * smax;
    let regularized = s.iter().any(|&v| v < floor);
    let inv_s = DVector::from_iterator(r, s.iter().map(|&v| 1.0 / v.max(floor)));
    let inverse = vt.transpose() * DMatrix::from_diagonal(&inv_s) * w.transpose();
    SigmaInverse { inverse, condition: smax / smin, regularized }
}

/// Time derivative of the DBO triplet.
#[derive(Debug, Clone)]
pub struct DboDerivative {
    pub du: Quasimatrix,
    pub dsigma: DMatrix<f64>,
    pub dy: DMatrix<f64>,
    pub sigma_condition: f64,
}

/// Evolution right-hand side of the triplet:
///
/// ```text
/// dU/dt = (MY − U⟨U, MY⟩) Σ⁻¹ + U φ
/// dΣ/dt = ⟨U, MY⟩ − φ Σ + Σ θ
/// dY/dt = (I − Y Yᵀ) ⟨M, U⟩ Σ⁻ᵀ + Y θ
/// ```
///
/// with `φ = ⟨U, dU/dt⟩` and `θ = Yᵀ dY/dt`. The sign of `Σθ` is the one
/// obtained by differentiating `Σ = ⟨U, ΦY⟩`; it makes the gauge terms cancel
/// in `d(UΣYᵀ)/dt`.
pub fn dbo_rhs(
    s: &DboState,
    my: &Quasimatrix,
    mtu: &SpeciesProjection,
    gauge: &SkewGauge,
) -> Result<DboDerivative> {
    let r = s.rank();
    let ns = s.n_species();
    s.u.grid().check_same(my.grid())?;
    if my.n_cols() != r {
        return Err(DboError::Dimension(format!("MY has {} columns, expected {r}", my.n_cols())));
    }
    if mtu.in_span.shape() != (r, r) {
        return Err(DboError::Dimension("MtU in-span coefficient must be r × r".into()));
    }
    if let Some(b) = &mtu.off_span {
        if b.shape() != (ns, r) {
            return Err(DboError::Dimension(format!("MtU is {:?}, expected ({ns}, {r})", b.shape())));
        }
    }
    if gauge.phi.nrows() != r {
        return Err(DboError::Dimension("gauge rank differs from state rank".into()));
    }

    let inv = sigma_pseudo_inverse(&s.sigma);
    if inv.condition > SIGMA_CONDITION_CAP {
        log::warn!(
            "t = {}: Sigma condition number {:.3e} exceeds cap, using regularized inverse",
            s.t,
            inv.condition
        );
    }

    let u = s.u.values();
    let u_my = gram(&s.u, my)?;
    let mut du = (my.values() - u * &u_my) * &inv.inverse;
    if !gauge.is_zero() {
        du += u * &gauge.phi;
    }

    let dsigma = &u_my - &gauge.phi * &s.sigma + &s.sigma * &gauge.theta;

    let mut dy = match &mtu.off_span {
        Some(b) => {
            let perp = b - &s.y * (s.y.transpose() * b);
            perp * inv.inverse.transpose()
        }
        None => DMatrix::zeros(ns, r),
    };
    if !gauge.is_zero() {
        dy += &s.y * &gauge.theta;
    }

    let du = s.u.with_values(du)?;
    if !du.is_finite() || !dsigma.iter().chain(dy.iter()).all(|v| v.is_finite()) {
        return Err(DboError::NonFinite(format!("DBO right-hand side at t = {}", s.t)));
    }
    Ok(DboDerivative { du, dsigma, dy, sigma_condition: inv.condition })
}

/// Rotation rates relating two gauges:
/// `dR_U = R_U φ̂ − φ R_U`, `dR_Y = R_Y θ̂ − θ R_Y`.
pub fn gauge_transport_rhs(
    r_u: &DMatrix<f64>,
    r_y: &DMatrix<f64>,
    gauge_a: &SkewGauge,
    gauge_b: &SkewGauge,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let dr_u = r_u * &gauge_b.phi - &gauge_a.phi * r_u;
    let dr_y = r_y * &gauge_b.theta - &gauge_a.theta * r_y;
    (dr_u, dr_y)
}

/// Deterministic orthonormal completion: returns `extra` unit columns
/// orthogonal to `basis` (Euclidean) and to each other.
fn orthonormal_completion(basis: &DMatrix<f64>, extra: usize, seed: u64) -> DMatrix<f64> {
    let n = basis.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut out = Vec::with_capacity(extra);
    while out.len() < extra {
        let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v -= c * p;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            v /= nv;
            cols.push(v.clone());
            out.push(v);
        }
    }
    DMatrix::from_columns(&out)
}

/// Thin SVD of a quasimatrix under the grid inner product, sorted by
/// nonincreasing singular value. Returns `(U, σ, V)` with `gram(U, U) = I`.
pub fn weighted_svd(a: &Quasimatrix) -> (Quasimatrix, DVector<f64>, DMatrix<f64>) {
    let w = a.grid().dx().sqrt();
    let (uu, sv, vt) = checked_svd(&(a.values() * w));
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let s = DVector::from_iterator(order.len(), order.iter().map(|&i| sv[i]));
    let u = DMatrix::from_columns(&order.iter().map(|&i| uu.column(i) / w).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    (Quasimatrix::new(*a.grid(), u).expect("row count preserved"), s, v)
}

/// Best rank-`r` start: truncated weighted SVD of the initial field.
///
/// Directions whose singular value falls below `SIGMA_CUTOFF · σ_max` are
/// replaced by a deterministic orthonormal completion and given `Σ_ii = σ_floor`.
pub fn init_from_field(phi0: &Quasimatrix, r: usize) -> Result<DboState> {
    let n = phi0.n_points();
    let ns = phi0.n_cols();
    if r == 0 || r > n.min(ns) {
        return Err(DboError::InvalidArgument(format!("rank {r} exceeds min(N={n}, n_s={ns})")));
    }
    if !phi0.is_finite() {
        return Err(DboError::NonFinite("initial field".into()));
    }
    let (u_all, s, v_all) = weighted_svd(phi0);
    let smax = s[0];
    let floor = if smax > 0.0 { SIGMA_CUTOFF * smax } else { SIGMA_CUTOFF };
    let kept = (0..r).take_while(|&i| s[i] >= floor && s[i] > 0.0).count();

    let w = phi0.grid().dx().sqrt();
    let mut u = u_all.values().columns(0, kept).into_owned();
    let mut y = v_all.columns(0, kept).into_owned();
    if kept < r {
        log::warn!("initial field has numerical rank {kept} < {r}; padding with sigma floor {floor:e}");
        let scaled = &u * w;
        let extra_u = orthonormal_completion(&scaled, r - kept, 0x5eed_0001) / w;
        let extra_y = orthonormal_completion(&y, r - kept, 0x5eed_0002);
        u = DMatrix::from_columns(
            &u.column_iter().chain(extra_u.column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>(),
        );
        y = DMatrix::from_columns(
            &y.column_iter().chain(extra_y.column_iter()).map(|c| c.into_owned()).collect::<Vec<_>>(),
        );
    }
    let diag = DVector::from_fn(r, |i, _| if i < kept { s[i] } else { floor });
    let state = DboState::new(
        Quasimatrix::new(*phi0.grid(), u)?,
        DMatrix::from_diagonal(&diag),
        y,
        0.0,
    )?;
    // Householder pass so both bases start orthonormal to working precision.
    reorthonormalize(&state)
}

/// `U Σ Y_subᵀ` for the requested species (all when `None`).
pub fn reconstruct(s: &DboState, species: Option<&[usize]>) -> Result<Quasimatrix> {
    let us = s.u_sigma();
    let values = match species {
        None => us * s.y.transpose(),
        Some(idx) => {
            let ns = s.n_species();
            if let Some(&bad) = idx.iter().find(|&&i| i >= ns) {
                return Err(DboError::IndexOutOfRange { index: bad, len: ns });
            }
            let rows: Vec<_> = idx.iter().map(|&i| s.y.row(i)).collect();
            us * DMatrix::from_rows(&rows).transpose()
        }
    };
    s.u.with_values(values)
}

/// Low-rank species correlation `C = Σ Σᵀ`.
pub fn low_rank_correlation(s: &DboState) -> DMatrix<f64> {
    &s.sigma * s.sigma.transpose()
}

/// Householder QR with the convention `diag(R) ≥ 0`.
fn signed_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut t = qr.r();
    for i in 0..t.nrows() {
        if t[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
            t.row_mut(i).neg_mut();
        }
    }
    (q, t)
}

fn max_identity_defect(g: &DMatrix<f64>) -> f64 {
    let r = g.nrows();
    (g - DMatrix::identity(r, r)).amax()
}

fn reorth_impl(s: &DboState, skip_tol: Option<f64>) -> Result<DboState> {
    let r = s.rank();
    let w = s.grid().dx().sqrt();
    let skip_u = skip_tol.is_some_and(|tol| max_identity_defect(&gram(&s.u, &s.u).expect("same grid")) <= tol);
    let skip_y = skip_tol.is_some_and(|tol| max_identity_defect(&(s.y.transpose() * &s.y)) <= tol);

    let (u, t_u) = if skip_u {
        (s.u.values().clone(), DMatrix::identity(r, r))
    } else {
        let (q, t) = signed_qr(&(s.u.values() * w));
        (q / w, t)
    };
    let (y, t_y) = if skip_y {
        (s.y.clone(), DMatrix::identity(r, r))
    } else {
        signed_qr(&s.y)
    };
    let scale = t_u.diagonal().amax().max(t_y.diagonal().amax());
    if (0..r).any(|i| t_u[(i, i)].abs() < SIGMA_CUTOFF * scale || t_y[(i, i)].abs() < SIGMA_CUTOFF * scale) {
        log::warn!("t = {}: rank collapse during reorthonormalization; Sigma inverse will be regularized", s.t);
    }
    let sigma = if skip_u && skip_y { s.sigma.clone() } else { &t_u * &s.sigma * t_y.transpose() };
    DboState::new(s.u.with_values(u)?, sigma, y, s.t)
}

/// Restore orthonormality of both bases, absorbing the triangular factors into `Σ`.
pub fn reorthonormalize(s: &DboState) -> Result<DboState> {
    reorth_impl(s, None)
}

/// As [`reorthonormalize`], but leaves a factor untouched when its
/// orthonormality defect is already at or below `tol`.
pub fn reorthonormalize_if_drifted(s: &DboState, tol: f64) -> Result<DboState> {
    reorth_impl(s, Some(tol))
}

/// Rotate to the canonical form via `Σ = R_U Σ̃ R_Yᵀ`.
///
/// Signs are fixed so the largest-magnitude entry of each `R_U` column is
/// nonnegative.
pub fn canonical_form(s: &DboState) -> CanonicalForm {
    let r = s.rank();
    let (w, sv, vt) = checked_svd(&s.sigma);
    let v = vt.transpose();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let sigma_tilde = DVector::from_iterator(r, order.iter().map(|&i| sv[i]));
    let mut r_u = DMatrix::from_columns(&order.iter().map(|&i| w.column(i)).collect::<Vec<_>>());
    let mut r_y = DMatrix::from_columns(&order.iter().map(|&i| v.column(i)).collect::<Vec<_>>());
    for j in 0..r {
        if leading_entry(r_u.column(j).iter().copied()) < 0.0 {
            r_u.column_mut(j).neg_mut();
            r_y.column_mut(j).neg_mut();
        }
    }
    CanonicalForm {
        u_tilde: s.u.mul_mat(&r_u),
        sigma_tilde,
        y_tilde: &s.y * &r_y,
        r_u,
        r_y,
    }
}

/// The entry of largest magnitude (first one on ties).
pub(crate) fn leading_entry(it: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for v in it {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    best
}

/// `‖Φ − UΣYᵀ‖_F / ‖Φ‖_F`, assembled in column blocks.
pub fn relative_error(s: &DboState, phi_full: &Quasimatrix) -> Result<f64> {
    s.grid().check_same(phi_full.grid())?;
    let ns = s.n_species();
    if phi_full.n_cols() != ns {
        return Err(DboError::Dimension(format!(
            "reference has {} species, state has {ns}",
            phi_full.n_cols()
        )));
    }
    let denom = frobenius_norm(phi_full);
    if denom == 0.0 {
        return Err(DboError::UndefinedMetric("reference field has zero norm".into()));
    }
    const BLOCK: usize = 256;
    let us = s.u_sigma();
    let dx = s.grid().dx();
    let mut acc = 0.0;
    let mut start = 0;
    while start < ns {
        let len = BLOCK.min(ns - start);
        let recon = &us * s.y.rows(start, len).transpose();
        let diff = phi_full.values().columns(start, len) - recon;
        acc += diff.iter().map(|v| v * v).sum::<f64>();
        start += len;
    }
    Ok((dx * acc).sqrt() / denom)
}

/// How far `d(UΣYᵀ)/dt − M(Φ)` is from being orthogonal to the tangent space
/// of the rank-`r` manifold at the current state.
///
/// Returns the largest of `‖⟨U, RY⟩‖`, `‖(I − UUᵀ)RY‖` and
/// `‖⟨R, U⟩ᵀ(I − YYᵀ)‖`, normalized by `‖MY‖ + ‖⟨M,U⟩‖`.
pub fn tangent_residual(
    s: &DboState,
    d: &DboDerivative,
    my: &Quasimatrix,
    mtu: &SpeciesProjection,
) -> Result<f64> {
    let u = s.u.values();
    let yty = s.y.transpose() * &s.y;
    let dyty = d.dy.transpose() * &s.y;
    // R·Y
    let ry = d.du.values() * &s.sigma * &yty + u * &d.dsigma * &yty + u * &s.sigma * &dyty - my.values();
    let ry = s.u.with_values(ry)?;
    let ury = gram(&s.u, &ry)?;
    let perp = ry.values() - u * &ury;
    let perp_norm = frobenius_norm(&s.u.with_values(perp)?);
    // ⟨R, U⟩ ∈ ℝ^{n_s×r}
    let g_du = gram(&d.du, &s.u)?;
    let mtu_full = mtu.full(&s.y);
    let r_u = &s.y * s.sigma.transpose() * &g_du + &s.y * d.dsigma.transpose() + &d.dy * s.sigma.transpose()
        - &mtu_full;
    let off = &r_u - &s.y * (s.y.transpose() * &r_u);
    let scale = frobenius_norm(my) + mtu_full.norm();
    let worst = ury.norm().max(perp_norm).max(off.norm());
    Ok(if scale > 0.0 { worst / scale } else { worst })
}
