//! Binary snapshot files.
//!
//! DBO files start with `DBO1` and a `u32` format version, followed by records
//! `t: f64, N: u64, r: u64, n_s: u64, U (column-major), Σ (row-major),
//! Y (row-major)`. Full-order files use `FOM1` and records
//! `t: f64, N: u64, n_s: u64, Φ (column-major)`. Everything is little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{DboError, Result};
use crate::fom::FomState;
use crate::grid::{Grid1D, Quasimatrix};
use crate::lowrank::DboState;

pub const DBO_MAGIC: &[u8; 4] = b"DBO1";
pub const FOM_MAGIC: &[u8; 4] = b"FOM1";
pub const FORMAT_VERSION: u32 = 1;

/// One DBO record as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DboRecord {
    pub t: f64,
    pub u: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl DboRecord {
    pub fn from_state(s: &DboState) -> Self {
        Self { t: s.t, u: s.u.values().clone(), sigma: s.sigma.clone(), y: s.y.clone() }
    }

    pub fn into_state(self, grid: Grid1D) -> Result<DboState> {
        DboState::new(Quasimatrix::new(grid, self.u)?, self.sigma, self.y, self.t)
    }
}

/// One full-order record as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FomRecord {
    pub t: f64,
    pub phi: DMatrix<f64>,
}

impl FomRecord {
    pub fn from_state(s: &FomState) -> Self {
        Self { t: s.t, phi: s.phi.values().clone() }
    }

    pub fn into_state(self, grid: Grid1D) -> Result<FomState> {
        FomState::new(Quasimatrix::new(grid, self.phi)?, self.t)
    }
}

fn put_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Appends DBO records to a file.
pub struct DboSnapshotWriter<W: Write> {
    out: W,
}

impl DboSnapshotWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> DboSnapshotWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(DBO_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        Ok(Self { out })
    }

    pub fn append(&mut self, s: &DboState) -> Result<()> {
        let w = &mut self.out;
        w.write_all(&s.t.to_le_bytes())?;
        for d in [s.u.n_points(), s.rank(), s.n_species()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        put_f64s(w, s.u.values().iter().copied())?;
        put_f64s(w, row_major(&s.sigma))?;
        put_f64s(w, row_major(&s.y))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Appends full-order records to a file.
pub struct FomSnapshotWriter<W: Write> {
    out: W,
}

impl FomSnapshotWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> FomSnapshotWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(FOM_MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        Ok(Self { out })
    }

    pub fn append(&mut self, s: &FomState) -> Result<()> {
        let w = &mut self.out;
        w.write_all(&s.t.to_le_bytes())?;
        for d in [s.phi.n_points(), s.phi.n_cols()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        put_f64s(w, s.phi.values().iter().copied())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_dbo_snapshots(path: &Path, states: &[DboState]) -> Result<()> {
    let mut w = DboSnapshotWriter::create(path)?;
    for s in states {
        w.append(s)?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_fom_snapshots(path: &Path, states: &[FomState]) -> Result<()> {
    let mut w = FomSnapshotWriter::create(path)?;
    for s in states {
        w.append(s)?;
    }
    w.finish()?;
    Ok(())
}

/// Byte reader that tracks how much input is left so that corrupt dimensions
/// are caught before allocating.
struct Cursor<R: Read> {
    inner: R,
    remaining: Option<u64>,
}

impl<R: Read> Cursor<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => DboError::Format(format!("truncated file while reading {what}")),
            _ => DboError::Io(e),
        })?;
        if let Some(r) = self.remaining.as_mut() {
            *r = r.saturating_sub(buf.len() as u64);
        }
        Ok(())
    }

    /// Reads the first byte of a record, or `None` at a clean end of file.
    fn record_start(&mut self, buf: &mut [u8; 8]) -> Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) if got == 0 => return Ok(false),
                Ok(0) => return Err(DboError::Format("truncated file while reading record time".into())),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if let Some(r) = self.remaining.as_mut() {
            *r = r.saturating_sub(8);
        }
        Ok(true)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| DboError::Format(format!("{what} size overflows")))?;
        if let Some(r) = self.remaining {
            if bytes as u64 > r {
                return Err(DboError::Format(format!("truncated file: {what} needs {bytes} bytes, {r} left")));
            }
        }
        let mut raw = vec![0u8; bytes];
        self.exact(&mut raw, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.exact(&mut m, "magic")?;
        if &m != magic {
            return Err(DboError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut v = [0u8; 4];
        self.exact(&mut v, "version")?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(DboError::Format(format!("unsupported format version {version}")));
        }
        Ok(())
    }
}

fn dim(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| DboError::Format(format!("{what} = {v} does not fit in memory")))
}

fn product(a: usize, b: usize, what: &str) -> Result<usize> {
    a.checked_mul(b).ok_or_else(|| DboError::Format(format!("{what} dimensions overflow")))
}

pub fn read_dbo_records<R: Read>(input: R, len_hint: Option<u64>) -> Result<Vec<DboRecord>> {
    let mut c = Cursor { inner: input, remaining: len_hint };
    c.header(DBO_MAGIC)?;
    let mut out = Vec::new();
    let mut tb = [0u8; 8];
    while c.record_start(&mut tb)? {
        let t = f64::from_le_bytes(tb);
        let n = dim(c.u64("N")?, "N")?;
        let r = dim(c.u64("r")?, "r")?;
        let ns = dim(c.u64("n_s")?, "n_s")?;
        let u = c.f64s(product(n, r, "U")?, "U")?;
        let sigma = c.f64s(product(r, r, "Sigma")?, "Sigma")?;
        let y = c.f64s(product(ns, r, "Y")?, "Y")?;
        out.push(DboRecord {
            t,
            u: DMatrix::from_vec(n, r, u),
            sigma: DMatrix::from_row_slice(r, r, &sigma),
            y: DMatrix::from_row_slice(ns, r, &y),
        });
    }
    Ok(out)
}

pub fn read_fom_records<R: Read>(input: R, len_hint: Option<u64>) -> Result<Vec<FomRecord>> {
    let mut c = Cursor { inner: input, remaining: len_hint };
    c.header(FOM_MAGIC)?;
    let mut out = Vec::new();
    let mut tb = [0u8; 8];
    while c.record_start(&mut tb)? {
        let t = f64::from_le_bytes(tb);
        let n = dim(c.u64("N")?, "N")?;
        let ns = dim(c.u64("n_s")?, "n_s")?;
        let phi = c.f64s(product(n, ns, "Phi")?, "Phi")?;
        out.push(FomRecord { t, phi: DMatrix::from_vec(n, ns, phi) });
    }
    Ok(out)
}

pub fn read_dbo_snapshots(path: &Path) -> Result<Vec<DboRecord>> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_dbo_records(BufReader::new(f), Some(len))
}

pub fn read_fom_snapshots(path: &Path) -> Result<Vec<FomRecord>> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_fom_records(BufReader::new(f), Some(len))
}
