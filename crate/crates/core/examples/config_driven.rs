//! The file-based workflow behind the command-line tool: parse a
//! configuration, run it into a directory, then resume the run from its last
//! snapshot and carry it further.
//!
//! ```text
//! cargo run --release --example config_driven -- [path/to/run.cfg]
//! ```

use dbo_rom::config::RunConfig;
use dbo_rom::pipeline::{continue_run, resume_state, run_dbo};

const DEMO: &str = "\
[grid]
n_points = 128
[time]
dt = 1/256
t_final = 1
[model]
nu = 0.02
source = toy_abc
source_k = 0.5
[species]
n_s = 60
[reduction]
ranks = 4, 8
reference = true
[outputs]
artifacts = snapshots, diagnostics, ipca
";

fn main() -> dbo_rom::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::from_file(path.as_ref())?,
        None => RunConfig::parse(DEMO)?,
    };
    let root = std::env::temp_dir().join("dbo_rom_config_example");
    let first = root.join("first");
    let summary = run_dbo(&cfg, &first)?;
    println!("{} steps to t = {}", summary.steps, summary.final_state.t);
    let mut files: Vec<_> = std::fs::read_dir(&first)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    files.sort();
    println!("wrote {files:?} to {}", first.display());

    let start = resume_state(&cfg, &first)?;
    let longer = RunConfig { t_final: 2.0 * cfg.t_final, ..cfg.clone() };
    let resumed = continue_run(&longer, start, &root.join("second"))?;
    for (r, rows) in longer.ranks.iter().zip(&resumed.diagnostics) {
        let last = rows.last().expect("final row");
        println!("r = {r}: t = {}, relative error {:.3e}", last.t, last.relative_error.unwrap_or(f64::NAN));
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
