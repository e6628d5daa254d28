//! Writes the reduced and full-order states as snapshot files, compares their
//! sizes, and recovers individual species from the compressed file alone.

use dbo_rom::config::RunConfig;
use dbo_rom::experiment::{Quiet, RunState, Simulation};
use dbo_rom::lowrank::reconstruct;
use dbo_rom::snapshot::{read_dbo_snapshots, write_dbo_snapshots, write_fom_snapshots};

fn main() -> dbo_rom::Result<()> {
    let cfg = RunConfig { n_s: 500, t_final: 1.0, ranks: vec![8], ..RunConfig::default() };
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let start = RunState::initial(&model, grid, Some(&cfg.initial_field()?), &[8], true, 0.0)?;
    let end = Simulation::new(model, cfg.dt).with_strides(usize::MAX, usize::MAX).run(start, cfg.t_final, &mut Quiet)?.final_state;

    let dir = std::env::temp_dir().join("dbo_rom_storage_example");
    std::fs::create_dir_all(&dir)?;
    let (dbo_path, fom_path) = (dir.join("dbo_r8.bin"), dir.join("fom.bin"));
    write_dbo_snapshots(&dbo_path, &end.dbo)?;
    write_fom_snapshots(&fom_path, std::slice::from_ref(end.fom.as_ref().expect("reference")))?;
    let db = std::fs::metadata(&dbo_path)?.len();
    let fb = std::fs::metadata(&fom_path)?.len();
    println!("reduced: {db} bytes, full: {fb} bytes, ratio {:.4} (r/n_s = {:.4})", db as f64 / fb as f64, 8.0 / cfg.n_s as f64);

    let stored = read_dbo_snapshots(&dbo_path)?.pop().expect("one record").into_state(grid)?;
    assert_eq!(stored.sigma, end.dbo[0].sigma);
    let picks = [0, 99, 499];
    let species = reconstruct(&stored, Some(&picks))?;
    let phi = &end.fom.as_ref().expect("reference").phi;
    for (k, &i) in picks.iter().enumerate() {
        let rec = species.values().column(k);
        let truth = phi.values().column(i);
        println!("species {:>3}: relative error {:.3e}", i + 1, (rec - truth).norm() / truth.norm());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
