//! How closely the DBO singular values follow the instantaneous SVD of the
//! full-order field, mode by mode, and the principal angles between the two
//! spatial subspaces.

use dbo_rom::config::RunConfig;
use dbo_rom::experiment::{Quiet, RunState, Simulation};
use dbo_rom::fom::{compare_spectra, ipca};
use dbo_rom::lowrank::canonical_form;

fn main() -> dbo_rom::Result<()> {
    let r = 8;
    let cfg = RunConfig { n_s: 300, t_final: 2.0, ranks: vec![r], ..RunConfig::default() };
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let phi0 = cfg.initial_field()?;
    let sim = Simulation::new(model.clone(), cfg.dt).with_strides(usize::MAX, usize::MAX);

    let mut state = RunState::initial(&model, grid, Some(&phi0), &[r], true, 0.0)?;
    for t in [0.5, 1.0, 1.5, 2.0] {
        state = sim.run(state, t, &mut Quiet)?.final_state;
        let s = &state.dbo[0];
        let reference = ipca(state.fom.as_ref().expect("full-order field"));
        let cmp = compare_spectra(s, &reference, r, 0.5 * cfg.dt)?;
        let sigma = canonical_form(s).sigma_tilde;
        println!("t = {t}");
        println!("  {:>4} {:>14} {:>14} {:>10} {:>10}", "mode", "dbo", "i-pca", "gap", "angle");
        for i in 0..r {
            println!(
                "  {:>4} {:>14.6e} {:>14.6e} {:>10.2e} {:>10.2e}",
                i + 1,
                sigma[i],
                reference.singular_values[i],
                cmp.gaps[i],
                cmp.principal_angles[i]
            );
        }
    }
    Ok(())
}
