//! Plugging a reaction model into the transport operator.
//!
//! A first-order decay chain `X_1 → X_2 → … → X_n` is registered next to the
//! built-in `A + B → C` kinetics and both are run through the reduced model
//! and the full-order reference.

use std::collections::BTreeMap;
use std::sync::Arc;

use dbo_rom::experiment::{Quiet, RunState, Simulation, TransportModel, VelocityModel};
use dbo_rom::lowrank::relative_error;
use dbo_rom::transport::{species_ic, DiffusivitySpec, SourceModel, SourceRegistry, SourceTerm};
use dbo_rom::Grid1D;

struct DecayChain {
    rate: f64,
}

impl SourceTerm for DecayChain {
    fn evaluate(&self, phi: &[f64], _rho: Option<f64>, _temperature: Option<f64>, out: &mut [f64]) {
        for i in 0..phi.len() {
            let gain = if i > 0 { self.rate * phi[i - 1] } else { 0.0 };
            let loss = if i + 1 < phi.len() { self.rate * phi[i] } else { 0.0 };
            out[i] = gain - loss;
        }
    }
}

fn decay_chain(params: &BTreeMap<String, f64>) -> dbo_rom::Result<SourceModel> {
    let rate = params.get("rate").copied().unwrap_or(0.5);
    Ok(SourceModel::new("decay_chain", params.clone(), Arc::new(DecayChain { rate })))
}

fn main() -> dbo_rom::Result<()> {
    let mut registry = SourceRegistry::default();
    registry.register("decay_chain", decay_chain);
    println!("registered sources: {:?}", registry.names());

    let grid = Grid1D::periodic_2pi(128)?;
    let ns = 40;
    let phi0 = species_ic(ns, 2.0, 11, &grid)?;
    // shift so concentrations start positive
    let phi0 = phi0.with_values(phi0.values().add_scalar(1.0))?;

    let params = BTreeMap::from([("rate".to_string(), 0.8), ("k".to_string(), 2.0)]);
    for name in ["decay_chain", "toy_abc"] {
        let model = TransportModel {
            velocity: VelocityModel::Burgers { nu: 0.05 },
            diffusivity: DiffusivitySpec::c_over_sqrt_i(0.02, ns)?,
            source: registry.build(name, &params)?,
        };
        let start = RunState::initial(&model, grid, Some(&phi0), &[2, 4, 8], true, 0.0)?;
        let sim = Simulation::new(model, 1.0 / 256.0).with_strides(usize::MAX, usize::MAX);
        let end = sim.run(start, 1.0, &mut Quiet)?.final_state;
        let fom = end.fom.as_ref().expect("reference");
        let errors: Vec<String> = end
            .dbo
            .iter()
            .map(|s| relative_error(s, &fom.phi).map(|e| format!("r = {}: {e:.3e}", s.rank())))
            .collect::<dbo_rom::Result<_>>()?;
        println!("{name:>12} at t = 1: {}", errors.join(", "));
    }
    Ok(())
}
