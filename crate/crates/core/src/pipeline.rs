//! File-producing runs behind the command-line subcommands.
//!
//! A run directory holds `run.cfg` (the resolved configuration), snapshot
//! files (`dbo_r{r}.bin`, `fom.bin`), per-rank `diagnostics_r{r}.csv` and
//! `ipca.csv` when a full-order field is present.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{Artifact, RunConfig, SnapshotCadence, VelocityKind};
use crate::diagnostics::{format_number, DiagnosticsRow, DiagnosticsWriter};
use crate::error::{DboError, Result};
use crate::experiment::{solve_burgers, IpcaRecord, RunObserver, RunState, RunSummary, Simulation};
use crate::fom::{compare_spectra, ipca};
use crate::grid::Grid1D;
use crate::lowrank::{reconstruct, relative_error};
use crate::snapshot::{read_dbo_snapshots, read_fom_snapshots, DboSnapshotWriter, FomSnapshotWriter};
use crate::transport::VelocityField;

pub const CONFIG_FILE: &str = "run.cfg";
pub const FOM_FILE: &str = "fom.bin";
pub const IPCA_FILE: &str = "ipca.csv";

pub fn dbo_file(r: usize) -> String {
    format!("dbo_r{r}.bin")
}

pub fn diagnostics_file(r: usize) -> String {
    format!("diagnostics_r{r}.csv")
}

fn simulation(cfg: &RunConfig, ranks: &[usize], ipca_wanted: bool) -> Result<Simulation> {
    let mut sim = Simulation::new(cfg.model()?, cfg.dt)
        .with_strides(cfg.output_stride, if ipca_wanted { cfg.ipca_stride } else { usize::MAX });
    for &r in ranks {
        sim = sim.with_gauge(r, cfg.gauge(r));
    }
    Ok(sim)
}

fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut resolved = cfg.clone();
    resolved.directory = dir.to_path_buf();
    fs::write(dir.join(CONFIG_FILE), resolved.to_config_string())?;
    Ok(())
}

/// Streams snapshots, diagnostics and I-PCA spectra to a run directory.
struct DirectoryWriter {
    dbo: Vec<(usize, DboSnapshotWriter<BufWriter<File>>)>,
    fom: Option<FomSnapshotWriter<BufWriter<File>>>,
    diagnostics: Vec<DiagnosticsWriter<BufWriter<File>>>,
    ipca: Option<BufWriter<File>>,
    every_output: bool,
    ipca_header: bool,
    ipca_ranks: Vec<usize>,
}

impl DirectoryWriter {
    fn create(dir: &Path, cfg: &RunConfig, ranks: &[usize], fom: bool, ipca_file: bool) -> Result<Self> {
        let snaps = cfg.wants(Artifact::Snapshots);
        let dbo = if snaps {
            ranks
                .iter()
                .map(|&r| Ok((r, DboSnapshotWriter::create(&dir.join(dbo_file(r)))?)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let fom = if snaps && fom { Some(FomSnapshotWriter::create(&dir.join(FOM_FILE))?) } else { None };
        let diagnostics = if cfg.wants(Artifact::Diagnostics) {
            ranks
                .iter()
                .map(|&r| DiagnosticsWriter::new(BufWriter::new(File::create(dir.join(diagnostics_file(r)))?), r))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let ipca = if ipca_file { Some(BufWriter::new(File::create(dir.join(IPCA_FILE))?)) } else { None };
        Ok(Self {
            dbo,
            fom,
            diagnostics,
            ipca,
            every_output: cfg.snapshots == SnapshotCadence::All,
            ipca_header: false,
            ipca_ranks: ranks.to_vec(),
        })
    }

    fn write_state(&mut self, state: &RunState) -> Result<()> {
        for (r, w) in &mut self.dbo {
            w.append(state.rank(*r).expect("rank present"))?;
        }
        if let (Some(w), Some(f)) = (&mut self.fom, &state.fom) {
            w.append(f)?;
        }
        Ok(())
    }

    fn finish(mut self, summary: &RunSummary) -> Result<()> {
        if !self.every_output {
            self.write_state(&summary.final_state)?;
        }
        for (_, w) in self.dbo {
            w.finish()?;
        }
        if let Some(w) = self.fom {
            w.finish()?;
        }
        for mut d in self.diagnostics {
            d.flush()?;
        }
        if let Some(mut w) = self.ipca {
            w.flush()?;
        }
        Ok(())
    }
}

impl RunObserver for DirectoryWriter {
    fn on_output(&mut self, _: usize, state: &RunState, rows: &[DiagnosticsRow]) -> Result<()> {
        log::info!("t = {:.6}", state.t);
        if self.every_output {
            self.write_state(state)?;
        }
        for (w, row) in self.diagnostics.iter_mut().zip(rows) {
            w.write_row(row)?;
        }
        Ok(())
    }

    fn on_ipca(&mut self, rec: &IpcaRecord) -> Result<()> {
        let Some(w) = &mut self.ipca else { return Ok(()) };
        if !self.ipca_header {
            let mut head = vec!["t".to_string()];
            head.extend((1..=rec.singular_values.len()).map(|i| format!("sigma_hat_{i}")));
            for r in &self.ipca_ranks {
                head.push(format!("ipca_error_r{r}"));
                head.push(format!("dbo_error_r{r}"));
            }
            writeln!(w, "{}", head.join(","))?;
            self.ipca_header = true;
        }
        let mut cells = vec![format_number(rec.t)];
        cells.extend(rec.singular_values.iter().map(|&s| format_number(s)));
        for c in &rec.ranks {
            cells.push(format_number(c.ipca_error));
            cells.push(format_number(c.dbo_error));
        }
        writeln!(w, "{}", cells.join(","))?;
        Ok(())
    }
}

/// Runs the configured DBO ranks, with the full-order field alongside when
/// `reference = true` (its snapshots then go to `fom.bin`). Returns the
/// summary after writing `dir`.
pub fn run_dbo(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let phi0 = cfg.initial_field()?;
    let start = RunState::initial(&model, grid, Some(&phi0), &cfg.ranks, cfg.reference, 0.0)?;
    let ipca_wanted = cfg.reference && cfg.wants(Artifact::Ipca);
    let sim = simulation(cfg, &cfg.ranks, ipca_wanted)?;
    prepare_dir(dir, cfg)?;
    let mut w = DirectoryWriter::create(dir, cfg, &cfg.ranks, cfg.reference, ipca_wanted)?;
    let summary = sim.run(start, cfg.t_final, &mut w)?;
    w.finish(&summary)?;
    Ok(summary)
}

/// Runs the full-order model alone and records its I-PCA spectra.
pub fn run_fom(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let phi0 = cfg.initial_field()?;
    let start = RunState::initial(&model, grid, Some(&phi0), &[], true, 0.0)?;
    let sim = simulation(cfg, &[], true)?;
    prepare_dir(dir, cfg)?;
    let mut w = DirectoryWriter::create(dir, cfg, &[], true, true)?;
    let summary = sim.run(start, cfg.t_final, &mut w)?;
    w.finish(&summary)?;
    Ok(summary)
}

/// Rebuilds the state stored as the last snapshot record of a run
/// directory. The Burgers velocity is not stored; it is recomputed from its
/// initial condition with the run's time step, which reproduces the
/// co-integrated field bit for bit.
pub fn resume_state(cfg: &RunConfig, dir: &Path) -> Result<RunState> {
    let grid = cfg.grid()?;
    let mut dbo = Vec::new();
    for &r in &cfg.ranks {
        let path = dir.join(dbo_file(r));
        if !path.exists() {
            continue;
        }
        let last = read_dbo_snapshots(&path)?
            .pop()
            .ok_or_else(|| DboError::Format(format!("{} holds no records", path.display())))?;
        dbo.push(last.into_state(grid)?);
    }
    let fom_path = dir.join(FOM_FILE);
    let fom = if fom_path.exists() {
        let last = read_fom_snapshots(&fom_path)?
            .pop()
            .ok_or_else(|| DboError::Format(format!("{} holds no records", fom_path.display())))?;
        Some(last.into_state(grid)?)
    } else {
        None
    };
    let t = match (dbo.first(), &fom) {
        (Some(s), _) => s.t,
        (None, Some(f)) => f.t,
        (None, None) => return Err(DboError::InvalidArgument(format!("no snapshots in {}", dir.display()))),
    };
    if dbo.iter().any(|s| s.t != t) || fom.as_ref().is_some_and(|f| f.t != t) {
        return Err(DboError::TimeMismatch(format!("snapshot files in {} end at different times", dir.display())));
    }
    let velocity = match cfg.velocity {
        VelocityKind::Burgers => solve_burgers(grid, cfg.nu, cfg.dt, t)?,
        VelocityKind::Zero => VelocityField::zero(grid),
    };
    Ok(RunState { t, velocity, dbo, fom })
}

/// Continues a run from `start` to `cfg.t_final`, writing a fresh run directory.
pub fn continue_run(cfg: &RunConfig, start: RunState, dir: &Path) -> Result<RunSummary> {
    let ranks = start.ranks();
    let ipca_wanted = start.fom.is_some() && cfg.wants(Artifact::Ipca);
    let sim = simulation(cfg, &ranks, ipca_wanted)?;
    prepare_dir(dir, cfg)?;
    let has_fom = start.fom.is_some();
    let mut w = DirectoryWriter::create(dir, cfg, &ranks, has_fom, ipca_wanted)?;
    let summary = sim.run(start, cfg.t_final, &mut w)?;
    w.finish(&summary)?;
    Ok(summary)
}

/// Per-rank result of [`compare_runs`].
#[derive(Debug, Clone)]
pub struct CompareTable {
    pub rank: usize,
    pub path: PathBuf,
    pub rows: usize,
    pub final_error: Option<f64>,
}

fn grid_of(dir: &Path) -> Result<(RunConfig, Grid1D)> {
    let cfg = RunConfig::from_file(&dir.join(CONFIG_FILE)).map_err(|e| match e {
        DboError::Io(io) => DboError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", dir.join(CONFIG_FILE).display()))),
        other => other,
    })?;
    let grid = cfg.grid()?;
    Ok((cfg, grid))
}

/// Error and spectrum-gap tables for every DBO snapshot file in `dbo_dir`
/// against the full-order snapshots in `fom_dir`, written to `out`.
pub fn compare_runs(dbo_dir: &Path, fom_dir: &Path, out: &Path) -> Result<Vec<CompareTable>> {
    let (dcfg, dgrid) = grid_of(dbo_dir)?;
    let (fcfg, fgrid) = grid_of(fom_dir)?;
    if !dgrid.same_as(&fgrid) {
        return Err(DboError::GridMismatch(format!(
            "DBO run uses N = {}, L = {}; full-order run uses N = {}, L = {}",
            dgrid.n_points(),
            dgrid.length(),
            fgrid.n_points(),
            fgrid.length()
        )));
    }
    if dcfg.n_s != fcfg.n_s {
        return Err(DboError::Dimension(format!("species counts differ: {} vs {}", dcfg.n_s, fcfg.n_s)));
    }
    let fom = read_fom_snapshots(&fom_dir.join(FOM_FILE))?
        .into_iter()
        .map(|r| r.into_state(fgrid))
        .collect::<Result<Vec<_>>>()?;
    let time_tol = 0.5 * dcfg.dt.min(fcfg.dt);
    fs::create_dir_all(out)?;
    let mut tables = Vec::new();
    for &r in &dcfg.ranks {
        let path = dbo_dir.join(dbo_file(r));
        if !path.exists() {
            continue;
        }
        let records = read_dbo_snapshots(&path)?;
        let table = out.join(format!("compare_r{r}.csv"));
        let mut w = BufWriter::new(File::create(&table)?);
        let mut head = vec!["t".to_string(), "relative_error".into(), "ipca_error".into()];
        head.extend((1..=r).map(|i| format!("gap_{i}")));
        head.push("max_principal_angle".into());
        writeln!(w, "{}", head.join(","))?;
        let mut rows = 0;
        let mut final_error = None;
        for rec in records {
            if rec.u.nrows() != dgrid.n_points() {
                return Err(DboError::GridMismatch(format!(
                    "{} holds N = {}, its run.cfg says {}",
                    path.display(),
                    rec.u.nrows(),
                    dgrid.n_points()
                )));
            }
            let s = rec.into_state(dgrid)?;
            let Some(f) = fom.iter().find(|f| (f.t - s.t).abs() <= time_tol) else { continue };
            let reference = ipca(f);
            let cmp = compare_spectra(&s, &reference, r, time_tol)?;
            let e = relative_error(&s, &f.phi)?;
            let mut cells = vec![format_number(s.t), format_number(e), format_number(reference.truncation_error(r))];
            cells.extend(cmp.gaps.iter().map(|&g| format_number(g)));
            cells.push(format_number(cmp.principal_angles.last().copied().unwrap_or(0.0)));
            writeln!(w, "{}", cells.join(","))?;
            rows += 1;
            final_error = Some(e);
        }
        w.flush()?;
        tables.push(CompareTable { rank: r, path: table, rows, final_error });
    }
    Ok(tables)
}

fn write_columns(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}", header.join(" "))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
        writeln!(w, "{}", cells.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every `figure_ranks` DBO together with the full-order model and
/// writes columnar text for species profiles at `t_final`, error against
/// time per rank, and DBO/I-PCA singular values against time.
pub fn export_figures(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let phi0 = cfg.initial_field()?;
    let ranks = cfg.figure_ranks.clone();
    let start = RunState::initial(&model, grid, Some(&phi0), &ranks, true, 0.0)?;
    let sim = simulation(cfg, &ranks, true)?;
    prepare_dir(dir, cfg)?;

    struct Progress;
    impl RunObserver for Progress {
        fn on_output(&mut self, _: usize, s: &RunState, _: &[DiagnosticsRow]) -> Result<()> {
            log::info!("t = {:.6}", s.t);
            Ok(())
        }
    }
    let summary = sim.run(start, cfg.t_final, &mut Progress)?;
    let fin = &summary.final_state;
    let fom = fin.fom.as_ref().expect("full-order field present");

    // species profiles at the final time
    let picks: Vec<usize> = cfg.profile_species.iter().map(|i| i - 1).collect();
    let recon: Vec<_> = fin.dbo.iter().map(|s| reconstruct(s, Some(&picks))).collect::<Result<_>>()?;
    let mut header = vec!["x".to_string()];
    for &i in &cfg.profile_species {
        header.push(format!("fom_phi{i}"));
        header.extend(ranks.iter().map(|r| format!("dbo_r{r}_phi{i}")));
    }
    let rows: Vec<Vec<f64>> = (0..grid.n_points())
        .map(|j| {
            let mut row = vec![grid.node(j)];
            for (k, &i) in picks.iter().enumerate() {
                row.push(fom.phi.values()[(j, i)]);
                row.extend(recon.iter().map(|q| q.values()[(j, k)]));
            }
            row
        })
        .collect();
    write_columns(&dir.join("profiles.dat"), &header, &rows)?;

    // error against time
    let mut header = vec!["t".to_string()];
    header.extend(ranks.iter().map(|r| format!("error_r{r}")));
    let n_rows = summary.diagnostics.first().map_or(0, Vec::len);
    let rows: Vec<Vec<f64>> = (0..n_rows)
        .map(|k| {
            let mut row = vec![summary.diagnostics[0][k].t];
            row.extend(summary.diagnostics.iter().map(|d| d[k].relative_error.unwrap_or(f64::NAN)));
            row
        })
        .collect();
    write_columns(&dir.join("error_vs_time.dat"), &header, &rows)?;

    // singular values against time, one file per rank
    for (k, &r) in ranks.iter().enumerate() {
        let mut header = vec!["t".to_string()];
        header.extend((1..=r).map(|i| format!("dbo_sigma_{i}")));
        header.extend((1..=r).map(|i| format!("ipca_sigma_{i}")));
        let rows: Vec<Vec<f64>> = summary
            .ipca
            .iter()
            .map(|rec| {
                let mut row = vec![rec.t];
                row.extend(rec.ranks[k].sigma_tilde.iter().copied());
                row.extend(rec.singular_values.iter().take(r).copied());
                row
            })
            .collect();
        write_columns(&dir.join(format!("singular_values_r{r}.dat")), &header, &rows)?;
    }
    Ok(summary)
}
