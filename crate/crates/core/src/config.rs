//! Run configuration in a flat `key = value` format.
//!
//! ```text
//! # comment            ; also a comment
//! [section]
//! key = value
//! ```
//!
//! Reals accept `2pi`, `pi`, and fractions such as `1/256`. Lists are comma
//! separated. Every key is optional; omitted keys take the defaults below,
//! which describe the 1000-species Burgers experiment.
//!
//! | section | key | default |
//! |---|---|---|
//! | grid | n_points, length, dealias | 512, 2pi, false |
//! | time | dt, t_final, output_stride, ipca_stride | 1/256, 4, 16, 16 |
//! | model | velocity (burgers, zero), nu | burgers, 0.01 |
//! | model | alpha_law (`c/sqrt(i)`, list), alpha_c, alpha_list | c/sqrt(i), 0.01 |
//! | model | source (none, toy_abc), source_k | none, 1 |
//! | species | n_s, ic (spectrum), b, seed | 1000, spectrum, 2, 0 |
//! | reduction | ranks, gauge (zero, random), gauge_seed, gauge_scale, reference | 8, zero, 0, 1, false |
//! | outputs | directory, artifacts, snapshots (all, final), figure_ranks, profile_species | out, snapshots+diagnostics, all, 2,4,8,12, 1,800 |

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{DboError, Result};
use crate::experiment::{TransportModel, VelocityModel};
use crate::grid::{Grid1D, Quasimatrix};
use crate::lowrank::SkewGauge;
use crate::timeint::step_count;
use crate::transport::{species_ic, DiffusivitySpec, SourceRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityKind {
    Burgers,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaLaw {
    /// `α_i = c / sqrt(i)`.
    COverSqrtI { c: f64 },
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaugeChoice {
    Zero,
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotCadence {
    All,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Artifact {
    Snapshots,
    Diagnostics,
    Ipca,
}

impl Artifact {
    fn name(self) -> &'static str {
        match self {
            Artifact::Snapshots => "snapshots",
            Artifact::Diagnostics => "diagnostics",
            Artifact::Ipca => "ipca",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_points: usize,
    pub length: f64,
    pub dealias: bool,
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    pub ipca_stride: usize,
    pub velocity: VelocityKind,
    pub nu: f64,
    pub alpha: AlphaLaw,
    pub source: String,
    pub source_k: f64,
    pub n_s: usize,
    pub b: f64,
    pub seed: u64,
    pub ranks: Vec<usize>,
    pub gauge: GaugeChoice,
    /// Co-integrate the full-order field with a DBO run.
    pub reference: bool,
    pub directory: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub snapshots: SnapshotCadence,
    pub figure_ranks: Vec<usize>,
    /// One-based species indices.
    pub profile_species: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_points: 512,
            length: 2.0 * std::f64::consts::PI,
            dealias: false,
            dt: 1.0 / 256.0,
            t_final: 4.0,
            output_stride: 16,
            ipca_stride: 16,
            velocity: VelocityKind::Burgers,
            nu: 0.01,
            alpha: AlphaLaw::COverSqrtI { c: 0.01 },
            source: "none".into(),
            source_k: 1.0,
            n_s: 1000,
            b: 2.0,
            seed: 0,
            ranks: vec![8],
            gauge: GaugeChoice::Zero,
            reference: false,
            directory: PathBuf::from("out"),
            artifacts: vec![Artifact::Snapshots, Artifact::Diagnostics],
            snapshots: SnapshotCadence::All,
            figure_ranks: vec![2, 4, 8, 12],
            profile_species: vec![1, 800],
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["n_points", "length", "dealias"]),
    ("time", &["dt", "t_final", "output_stride", "ipca_stride"]),
    ("model", &["velocity", "nu", "alpha_law", "alpha_c", "alpha_list", "source", "source_k"]),
    ("species", &["n_s", "ic", "b", "seed"]),
    ("reduction", &["ranks", "r", "gauge", "gauge_seed", "gauge_scale", "reference"]),
    ("outputs", &["directory", "artifacts", "snapshots", "figure_ranks", "profile_species"]),
];

/// Raw `section.key → (value, line)` table.
struct Entries(HashMap<String, (String, usize)>);

impl Entries {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.0.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn line(&self, key: &str) -> usize {
        self.0.get(key).map_or(0, |(_, l)| *l)
    }
}

fn err(line: usize, msg: impl Into<String>) -> DboError {
    DboError::Config { line, msg: msg.into() }
}

fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    let pi_mult = |t: &str| -> Option<f64> {
        let t = t.trim();
        if t == "pi" {
            return Some(std::f64::consts::PI);
        }
        if let Some(m) = t.strip_suffix("pi") {
            return m.trim().trim_end_matches('*').trim().parse::<f64>().ok().map(|m| m * std::f64::consts::PI);
        }
        t.parse::<f64>().ok()
    };
    match s.split_once('/') {
        Some((a, b)) => Some(pi_mult(a)? / pi_mult(b)?),
        None => pi_mult(s),
    }
}

fn real(e: &Entries, key: &str, default: f64) -> Result<f64> {
    match e.get(key) {
        None => Ok(default),
        Some((v, line)) => match parse_real(v) {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(err(line, format!("{key}: '{v}' is not a finite real number"))),
        },
    }
}

fn integer<T: std::str::FromStr>(e: &Entries, key: &str, default: T) -> Result<T> {
    match e.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse().map_err(|_| err(line, format!("{key}: '{v}' is not a nonnegative integer"))),
    }
}

fn boolean(e: &Entries, key: &str, default: bool) -> Result<bool> {
    match e.get(key) {
        None => Ok(default),
        Some(("true" | "yes" | "on", _)) => Ok(true),
        Some(("false" | "no" | "off", _)) => Ok(false),
        Some((v, line)) => Err(err(line, format!("{key}: '{v}' is not true or false"))),
    }
}

fn list<T>(e: &Entries, key: &str, default: Vec<T>, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    match e.get(key) {
        None => Ok(default),
        Some((v, line)) => v
            .split(',')
            .map(|p| parse(p.trim()).ok_or_else(|| err(line, format!("{key}: bad list item '{}'", p.trim()))))
            .collect(),
    }
}

fn choice<'a>(e: &'a Entries, key: &str, default: &'a str, allowed: &[&str]) -> Result<&'a str> {
    match e.get(key) {
        None => Ok(default),
        Some((v, _)) if allowed.contains(&v) => Ok(v),
        Some((v, line)) => Err(err(line, format!("{key}: '{v}' is not one of {}", allowed.join(", ")))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = tokenize(text)?;
        let mut cfg = Self::resolve(&entries)?;
        cfg.fit_defaults(&entries);
        cfg.validate(&entries)?;
        Ok(cfg)
    }

    fn resolve(e: &Entries) -> Result<Self> {
        let d = Self::default();
        let velocity = match choice(e, "model.velocity", "burgers", &["burgers", "zero"])? {
            "zero" => VelocityKind::Zero,
            _ => VelocityKind::Burgers,
        };
        let alpha = match choice(e, "model.alpha_law", "c/sqrt(i)", &["c/sqrt(i)", "list"])? {
            "list" => {
                if e.get("model.alpha_list").is_none() {
                    return Err(err(e.line("model.alpha_law"), "alpha_law = list needs alpha_list"));
                }
                AlphaLaw::List(list(e, "model.alpha_list", Vec::new(), parse_real)?)
            }
            _ => AlphaLaw::COverSqrtI { c: real(e, "model.alpha_c", 0.01)? },
        };
        choice(e, "species.ic", "spectrum", &["spectrum"])?;
        let gauge = match choice(e, "reduction.gauge", "zero", &["zero", "random"])? {
            "random" => GaugeChoice::Random {
                seed: integer(e, "reduction.gauge_seed", 0)?,
                scale: real(e, "reduction.gauge_scale", 1.0)?,
            },
            _ => GaugeChoice::Zero,
        };
        if e.get("reduction.r").is_some() && e.get("reduction.ranks").is_some() {
            return Err(err(e.line("reduction.r"), "give either r or ranks, not both"));
        }
        let ranks_key = if e.get("reduction.r").is_some() { "reduction.r" } else { "reduction.ranks" };
        let artifacts = list(e, "outputs.artifacts", d.artifacts.clone(), |s| match s {
            "snapshots" => Some(Artifact::Snapshots),
            "diagnostics" => Some(Artifact::Diagnostics),
            "ipca" => Some(Artifact::Ipca),
            _ => None,
        })?;
        Ok(Self {
            n_points: integer(e, "grid.n_points", d.n_points)?,
            length: real(e, "grid.length", d.length)?,
            dealias: boolean(e, "grid.dealias", d.dealias)?,
            dt: real(e, "time.dt", d.dt)?,
            t_final: real(e, "time.t_final", d.t_final)?,
            output_stride: integer(e, "time.output_stride", d.output_stride)?,
            ipca_stride: integer(e, "time.ipca_stride", d.ipca_stride)?,
            velocity,
            nu: real(e, "model.nu", d.nu)?,
            alpha,
            source: choice(e, "model.source", "none", &["none", "toy_abc"])?.to_string(),
            source_k: real(e, "model.source_k", d.source_k)?,
            n_s: integer(e, "species.n_s", d.n_s)?,
            b: real(e, "species.b", d.b)?,
            seed: integer(e, "species.seed", d.seed)?,
            ranks: list(e, ranks_key, d.ranks.clone(), |s| s.parse().ok())?,
            gauge,
            reference: boolean(e, "reduction.reference", d.reference)?,
            directory: e.get("outputs.directory").map_or(d.directory.clone(), |(v, _)| PathBuf::from(v)),
            artifacts,
            snapshots: match choice(e, "outputs.snapshots", "all", &["all", "final"])? {
                "final" => SnapshotCadence::Final,
                _ => SnapshotCadence::All,
            },
            figure_ranks: list(e, "outputs.figure_ranks", d.figure_ranks.clone(), |s| s.parse().ok())?,
            profile_species: list(e, "outputs.profile_species", d.profile_species.clone(), |s| s.parse().ok())?,
        })
    }

    /// Shrinks defaulted rank and species lists to fit a smaller run.
    fn fit_defaults(&mut self, e: &Entries) {
        let max_r = self.n_points.min(self.n_s).max(1);
        if e.get("reduction.ranks").is_none() && e.get("reduction.r").is_none() {
            self.ranks = self.ranks.iter().map(|&r| r.min(max_r)).collect();
        }
        if e.get("outputs.figure_ranks").is_none() {
            self.figure_ranks.retain(|&r| r <= max_r);
            if self.figure_ranks.is_empty() {
                self.figure_ranks.push(max_r);
            }
        }
        if e.get("outputs.profile_species").is_none() {
            self.profile_species = self.profile_species.iter().map(|&i| i.min(self.n_s.max(1))).collect();
            self.profile_species.dedup();
        }
    }

    fn validate(&self, e: &Entries) -> Result<()> {
        let at = |k: &str| e.line(k);
        if self.n_points < 2 || self.n_points % 2 != 0 {
            return Err(err(at("grid.n_points"), format!("n_points must be even and at least 2, got {}", self.n_points)));
        }
        if !(self.length > 0.0) {
            return Err(err(at("grid.length"), "length must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(err(at("time.dt"), "dt must be positive"));
        }
        if self.t_final < 0.0 {
            return Err(err(at("time.t_final"), "t_final must be nonnegative"));
        }
        if step_count(0.0, self.t_final, self.dt).is_err() {
            return Err(err(
                at("time.t_final").max(at("time.dt")),
                format!("t_final / dt = {} is not an integer", self.t_final / self.dt),
            ));
        }
        if self.output_stride == 0 {
            return Err(err(at("time.output_stride"), "output_stride must be at least 1"));
        }
        if self.ipca_stride == 0 {
            return Err(err(at("time.ipca_stride"), "ipca_stride must be at least 1"));
        }
        if self.nu < 0.0 {
            return Err(err(at("model.nu"), "nu must be nonnegative"));
        }
        if self.n_s == 0 {
            return Err(err(at("species.n_s"), "n_s must be at least 1"));
        }
        match &self.alpha {
            AlphaLaw::COverSqrtI { c } if *c < 0.0 => {
                return Err(err(at("model.alpha_c"), "alpha_c must be nonnegative"));
            }
            AlphaLaw::List(a) if a.len() != self.n_s => {
                return Err(err(
                    at("model.alpha_list"),
                    format!("alpha_list has {} entries, n_s is {}", a.len(), self.n_s),
                ));
            }
            AlphaLaw::List(a) if a.iter().any(|v| *v < 0.0) => {
                return Err(err(at("model.alpha_list"), "diffusivities must be nonnegative"));
            }
            _ => {}
        }
        if self.source == "toy_abc" && self.n_s < 3 {
            return Err(err(at("model.source"), "toy_abc needs at least 3 species"));
        }
        if !(self.b > 0.0) {
            return Err(err(at("species.b"), "b must be positive"));
        }
        let ranks_line = at("reduction.ranks").max(at("reduction.r"));
        let max_r = self.n_points.min(self.n_s);
        for (name, ranks, line) in [
            ("ranks", &self.ranks, ranks_line),
            ("figure_ranks", &self.figure_ranks, at("outputs.figure_ranks")),
        ] {
            if ranks.is_empty() {
                return Err(err(line, format!("{name} must not be empty")));
            }
            if let Some(r) = ranks.iter().find(|&&r| r == 0 || r > max_r) {
                return Err(err(line, format!("rank {r} must lie in 1..={max_r}")));
            }
            let mut s = ranks.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != ranks.len() {
                return Err(err(line, format!("{name} contains duplicates")));
            }
        }
        if let Some(i) = self.profile_species.iter().find(|&&i| i == 0 || i > self.n_s) {
            return Err(err(at("outputs.profile_species"), format!("species {i} outside 1..={}", self.n_s)));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Ok(Grid1D::new(self.n_points, self.length)?.with_dealiasing(self.dealias))
    }

    pub fn diffusivity(&self) -> Result<DiffusivitySpec> {
        match &self.alpha {
            AlphaLaw::COverSqrtI { c } => DiffusivitySpec::c_over_sqrt_i(*c, self.n_s),
            AlphaLaw::List(a) => DiffusivitySpec::new(a.clone()),
        }
    }

    pub fn model(&self) -> Result<TransportModel> {
        let mut params = BTreeMap::new();
        if self.source == "toy_abc" {
            params.insert("k".to_string(), self.source_k);
        }
        Ok(TransportModel {
            velocity: match self.velocity {
                VelocityKind::Burgers => VelocityModel::Burgers { nu: self.nu },
                VelocityKind::Zero => VelocityModel::Zero,
            },
            diffusivity: self.diffusivity()?,
            source: SourceRegistry::default().build(&self.source, &params)?,
        })
    }

    pub fn initial_field(&self) -> Result<Quasimatrix> {
        species_ic(self.n_s, self.b, self.seed, &self.grid()?)
    }

    pub fn gauge(&self, r: usize) -> SkewGauge {
        match self.gauge {
            GaugeChoice::Zero => SkewGauge::zero(r),
            GaugeChoice::Random { seed, scale } => SkewGauge::random(r, scale, seed),
        }
    }

    pub fn wants(&self, a: Artifact) -> bool {
        self.artifacts.contains(&a)
    }

    /// The resolved configuration in the same grammar it is read from.
    pub fn to_config_string(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "[grid]\nn_points = {}\nlength = {:?}\ndealias = {}\n", self.n_points, self.length, self.dealias);
        let _ = writeln!(
            s,
            "[time]\ndt = {:?}\nt_final = {:?}\noutput_stride = {}\nipca_stride = {}\n",
            self.dt, self.t_final, self.output_stride, self.ipca_stride
        );
        let _ = writeln!(
            s,
            "[model]\nvelocity = {}\nnu = {:?}",
            match self.velocity {
                VelocityKind::Burgers => "burgers",
                VelocityKind::Zero => "zero",
            },
            self.nu
        );
        match &self.alpha {
            AlphaLaw::COverSqrtI { c } => {
                let _ = writeln!(s, "alpha_law = c/sqrt(i)\nalpha_c = {c:?}");
            }
            AlphaLaw::List(a) => {
                let items = a.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ");
                let _ = writeln!(s, "alpha_law = list\nalpha_list = {items}");
            }
        }
        let _ = writeln!(s, "source = {}\nsource_k = {:?}\n", self.source, self.source_k);
        let _ = writeln!(s, "[species]\nn_s = {}\nic = spectrum\nb = {:?}\nseed = {}\n", self.n_s, self.b, self.seed);
        let _ = writeln!(s, "[reduction]\nranks = {}", join(&self.ranks));
        match self.gauge {
            GaugeChoice::Zero => {
                let _ = writeln!(s, "gauge = zero");
            }
            GaugeChoice::Random { seed, scale } => {
                let _ = writeln!(s, "gauge = random\ngauge_seed = {seed}\ngauge_scale = {scale:?}");
            }
        }
        let _ = writeln!(s, "reference = {}\n", self.reference);
        let artifacts = self.artifacts.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ");
        let _ = write!(
            s,
            "[outputs]\ndirectory = {}\nartifacts = {artifacts}\nsnapshots = {}\nfigure_ranks = {}\nprofile_species = {}\n",
            self.directory.display(),
            match self.snapshots {
                SnapshotCadence::All => "all",
                SnapshotCadence::Final => "final",
            },
            join(&self.figure_ranks),
            join(&self.profile_species)
        );
        s
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map: HashMap<String, (String, usize)> = HashMap::new();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("unterminated section header '{content}'")))?
                .trim();
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| err(line, format!("unknown section [{name}]")))?;
            section = Some(known.0);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', found '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        let sec = section.ok_or_else(|| err(line, format!("key '{key}' appears before any [section]")))?;
        let allowed = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(err(line, format!("unknown key '{key}' in [{sec}]")));
        }
        if value.is_empty() {
            return Err(err(line, format!("key '{key}' has no value")));
        }
        let full = format!("{sec}.{key}");
        if let Some((_, first)) = map.get(&full) {
            return Err(err(line, format!("'{key}' already set on line {first}")));
        }
        map.insert(full, (value.to_string(), line));
    }
    Ok(Entries(map))
}
