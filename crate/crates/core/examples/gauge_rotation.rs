//! Two decompositions of the same field, one with the dynamically orthogonal
//! gauge and one with a random skew gauge, integrated side by side with the
//! rotations that map one onto the other. Uses the composite-state RK4 driver
//! directly.

use dbo_rom::grid::frobenius_norm;
use dbo_rom::lowrank::{dbo_rhs, gauge_transport_rhs, init_from_field, reconstruct, DboState, SkewGauge};
use dbo_rom::timeint::{integrate, CompositeState};
use dbo_rom::transport::{burgers_rhs, project_model_rhs, species_ic, DiffusivitySpec, SourceModel, VelocityField};
use dbo_rom::{Grid1D, Quasimatrix};
use nalgebra::DMatrix;

fn main() -> dbo_rom::Result<()> {
    let (n, ns, r) = (64, 8, 3);
    let grid = Grid1D::periodic_2pi(n)?;
    let nu = 0.05;
    let diff = DiffusivitySpec::c_over_sqrt_i(0.05, ns)?;
    let src = SourceModel::none();
    let zero = SkewGauge::zero(r);
    let skew = SkewGauge::random(r, 0.5, 7);
    let s0 = init_from_field(&species_ic(ns, 2.0, 7, &grid)?, r)?;

    let mut cs = CompositeState::new().with("v", VelocityField::shock_forming_ic(grid, nu).v.into_values());
    for tag in ["a", "b"] {
        cs.push(format!("U{tag}"), s0.u.values().clone());
        cs.push(format!("S{tag}"), s0.sigma.clone());
        cs.push(format!("Y{tag}"), s0.y.clone());
    }
    cs.push("RU", DMatrix::identity(r, r));
    cs.push("RY", DMatrix::identity(r, r));

    let unpack = |cs: &CompositeState, tag: &str, t: f64| -> dbo_rom::Result<DboState> {
        DboState::new(
            Quasimatrix::new(grid, cs.require(&format!("U{tag}"))?.clone())?,
            cs.require(&format!("S{tag}"))?.clone(),
            cs.require(&format!("Y{tag}"))?.clone(),
            t,
        )
    };
    let rhs = |t: f64, cs: &CompositeState| {
        let v = VelocityField { v: Quasimatrix::new(grid, cs.require("v")?.clone())?, nu };
        let mut out = CompositeState::new().with("v", burgers_rhs(&v).into_values());
        for (tag, gauge) in [("a", &zero), ("b", &skew)] {
            let s = unpack(cs, tag, t)?;
            let p = project_model_rhs(&s, &v, &diff, &src, t)?;
            let d = dbo_rhs(&s, &p.my, &p.mtu, gauge)?;
            out.push(format!("U{tag}"), d.du.into_values());
            out.push(format!("S{tag}"), d.dsigma);
            out.push(format!("Y{tag}"), d.dy);
        }
        let (ru, ry) = gauge_transport_rhs(cs.require("RU")?, cs.require("RY")?, &zero, &skew);
        Ok(out.with("RU", ru).with("RY", ry))
    };

    println!("{:>6} {:>14} {:>14} {:>14}", "t", "reconstruction", "U_b − U_a R_U", "‖Σ_b − Σ_a‖");
    let observer = |_: usize, t: f64, cs: &CompositeState| {
        let (a, b) = (unpack(cs, "a", t)?, unpack(cs, "b", t)?);
        let (ra, rb) = (reconstruct(&a, None)?, reconstruct(&b, None)?);
        let gap = frobenius_norm(&ra.with_values(ra.values() - rb.values())?) / a.sigma.norm();
        let basis = (b.u.values() - a.u.values() * cs.require("RU")?).norm() * grid.dx().sqrt();
        println!("{t:>6.3} {gap:>14.3e} {basis:>14.3e} {:>14.3e}", (&b.sigma - &a.sigma).norm());
        Ok(())
    };
    integrate(cs, 0.0, 1.0 / 256.0, 1.0, 32, rhs, |_, _| Ok(()), observer)?;
    println!("the factors differ by a rotation; the field they represent does not");
    Ok(())
}
