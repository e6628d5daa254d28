//! Full-order species solver and instantaneous PCA (I-PCA).
//!
//! The full-order model advances every species with the same spectral
//! operators the DBO run uses, so error comparisons isolate the low-rank
//! truncation. I-PCA is the per-time weighted SVD of the full field and the
//! optimal rank-`r` benchmark.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{DboError, Result};
use crate::grid::{ddx_and_d2dx2, gram, Quasimatrix};
use crate::lowrank::{canonical_form, leading_entry, weighted_svd, DboState};
use crate::transport::{DiffusivitySpec, SourceModel, VelocityField};

#[derive(Debug, Clone, PartialEq)]
pub struct FomState {
    pub phi: Quasimatrix,
    pub t: f64,
}

impl FomState {
    pub fn new(phi: Quasimatrix, t: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(DboError::NonFinite("full-order field".into()));
        }
        Ok(Self { phi, t })
    }

    pub fn n_species(&self) -> usize {
        self.phi.n_cols()
    }
}

/// Column `i`: `−v ∂φ_i/∂x + α_i g(x,t) ∂²φ_i/∂x² + S_i(Φ)`.
pub fn fom_rhs(
    phi: &Quasimatrix,
    v: &VelocityField,
    diff: &DiffusivitySpec,
    src: &SourceModel,
    t: f64,
) -> Result<Quasimatrix> {
    let grid = *phi.grid();
    grid.check_same(v.v.grid())?;
    let n = phi.n_points();
    let ns = phi.n_cols();
    if diff.n_species() != ns {
        return Err(DboError::Dimension(format!(
            "diffusivity has {} species, field has {ns}",
            diff.n_species()
        )));
    }
    src.check_species(ns)?;

    let (d1, d2) = ddx_and_d2dx2(phi);
    let vel = v.v.values().as_slice();
    let scaling = diff.scaling_on(&grid, t);
    let alpha = diff.alpha();
    let mut out = d2.into_values();
    let d1 = d1.into_values();
    out.as_mut_slice()
        .par_chunks_mut(n)
        .zip(d1.as_slice().par_chunks(n))
        .enumerate()
        .for_each(|(i, (o, a))| {
            let ai = alpha[i];
            for j in 0..n {
                let g = scaling.as_ref().map_or(1.0, |s| s[j]);
                o[j] = -vel[j] * a[j] + ai * g * o[j];
            }
        });

    if !src.is_none() {
        let mut row = vec![0.0; ns];
        let mut s = vec![0.0; ns];
        for j in 0..n {
            for i in 0..ns {
                row[i] = phi.values()[(j, i)];
            }
            src.evaluate(&row, &mut s);
            for i in 0..ns {
                out[(j, i)] += s[i];
            }
        }
    }

    for (i, col) in out.column_iter().enumerate() {
        if let Some(j) = col.iter().position(|v| !v.is_finite()) {
            return Err(DboError::NonFinite(format!(
                "full-order right-hand side for species {} at grid index {j}",
                i + 1
            )));
        }
    }
    Quasimatrix::new(grid, out)
}

/// Instantaneous SVD of the full field.
#[derive(Debug, Clone)]
pub struct IpcaResult {
    pub singular_values: DVector<f64>,
    pub u_hat: Quasimatrix,
    pub y_hat: DMatrix<f64>,
    pub t: f64,
}

impl IpcaResult {
    /// `sqrt(Σ_{i>r} σ̂_i²) / ‖Φ‖_F`: the best achievable rank-`r` relative error.
    pub fn truncation_error(&self, r: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let tail: f64 = self.singular_values.iter().skip(r).map(|s| s * s).sum();
        if total == 0.0 {
            0.0
        } else {
            (tail / total).sqrt()
        }
    }
}

/// Weighted SVD of the full field. Each `û_i` is signed so that its
/// largest-magnitude node value is nonnegative.
pub fn ipca(s: &FomState) -> IpcaResult {
    let (u, sv, v) = weighted_svd(&s.phi);
    let mut u = u.into_values();
    let mut v = v;
    for j in 0..u.ncols() {
        if leading_entry(u.column(j).iter().copied()) < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    IpcaResult {
        singular_values: sv,
        u_hat: Quasimatrix::new(*s.phi.grid(), u).expect("row count preserved"),
        y_hat: v,
        t: s.t,
    }
}

/// Per-mode singular-value gaps and principal angles between DBO and I-PCA subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    /// `|σ̃_i − σ̂_i| / σ̂_i`, `i = 1 … r`.
    pub gaps: Vec<f64>,
    /// Principal angles (radians, ascending) between `span(Ũ)` and `span(Û_{1:r})`.
    pub principal_angles: Vec<f64>,
}

pub fn compare_spectra(dbo: &DboState, reference: &IpcaResult, r: usize, time_tol: f64) -> Result<SpectrumComparison> {
    if (dbo.t - reference.t).abs() > time_tol {
        return Err(DboError::TimeMismatch(format!("DBO at t = {}, I-PCA at t = {}", dbo.t, reference.t)));
    }
    if r == 0 || r > dbo.rank() || r > reference.singular_values.len() {
        return Err(DboError::InvalidArgument(format!("comparison rank {r} out of range")));
    }
    let c = canonical_form(dbo);
    let gaps = (0..r)
        .map(|i| {
            let ref_s = reference.singular_values[i];
            (c.sigma_tilde[i] - ref_s).abs() / ref_s
        })
        .collect();
    let u_ref = reference.u_hat.with_values(reference.u_hat.values().columns(0, r).into_owned())?;
    let u_dbo = c.u_tilde.with_values(c.u_tilde.values().columns(0, r).into_owned())?;
    let cross = gram(&u_dbo, &u_ref)?;
    let mut angles: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(SpectrumComparison { gaps, principal_angles: angles })
}
