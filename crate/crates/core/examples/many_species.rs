//! Viscous Burgers carrying passive species, reduced at several ranks and
//! checked against the full-order solution.
//!
//! ```text
//! cargo run --release --example many_species -- [n_species] [t_final]
//! ```
//!
//! With `1000 4` this is the full default configuration (a few minutes).

use dbo_rom::config::RunConfig;
use dbo_rom::diagnostics::DiagnosticsRow;
use dbo_rom::experiment::{IpcaRecord, RunObserver, RunState, Simulation};

struct Table;

impl RunObserver for Table {
    fn on_ipca(&mut self, rec: &IpcaRecord) -> dbo_rom::Result<()> {
        let cells: Vec<String> = rec.ranks.iter().map(|c| format!("{:>10.3e} {:>10.3e}", c.dbo_error, c.ipca_error)).collect();
        println!("{:>6.3}  {}", rec.t, cells.join("  "));
        Ok(())
    }

    fn on_output(&mut self, _: usize, _: &RunState, _: &[DiagnosticsRow]) -> dbo_rom::Result<()> {
        Ok(())
    }
}

fn main() -> dbo_rom::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_s: usize = args.next().map_or(200, |a| a.parse().expect("species count"));
    let t_final: f64 = args.next().map_or(2.0, |a| a.parse().expect("final time"));
    let ranks = [2, 4, 8, 12];

    let cfg = RunConfig { n_s, t_final, ranks: ranks.to_vec(), ..RunConfig::default() };
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let phi0 = cfg.initial_field()?;
    let start = RunState::initial(&model, grid, Some(&phi0), &ranks, true, 0.0)?;

    println!("N = {}, n_s = {n_s}, dt = {}, t_final = {t_final}", grid.n_points(), cfg.dt);
    let head: Vec<String> = ranks.iter().map(|r| format!("{:>10} {:>10}", format!("dbo r={r}"), "i-pca")).collect();
    println!("{:>6}  {}", "t", head.join("  "));
    let sim = Simulation::new(model, cfg.dt).with_strides(cfg.output_stride, 4 * cfg.ipca_stride);
    let summary = sim.run(start, t_final, &mut Table)?;

    let last = summary.ipca.last().expect("final comparison");
    let e2 = last.ranks[0].dbo_error;
    let e12 = last.ranks[3].dbo_error;
    println!("E(2)/E(12) at t = {:.3}: {:.2}", last.t, e2 / e12);
    Ok(())
}
