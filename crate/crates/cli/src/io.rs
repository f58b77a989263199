//! On-disk formats: binary field snapshots, CSV ledgers and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"SSCL";
pub const SNAPSHOT_VERSION: u16 = 1;
/// Payload tag for little-endian `f64`.
pub const DTYPE_F64_LE: u8 = 1;

/// A scalar field on the grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub sizes: Vec<u32>,
    pub time: f64,
    /// Row-major, last axis fastest.
    pub data: Vec<f64>,
}

impl FieldSnapshot {
    /// `MAGIC | version u16 | dim u16 | N_i u32 … | time f64 | dtype u8 | payload`,
    /// all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(17 + 4 * self.sizes.len() + 8 * self.data.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.sizes.len() as u16).to_le_bytes());
        for n in &self.sizes {
            b.extend_from_slice(&n.to_le_bytes());
        }
        b.extend_from_slice(&self.time.to_le_bytes());
        b.push(DTYPE_F64_LE);
        for v in &self.data {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, format!("snapshot: {m}"));
        let mut r = Reader { b, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?);
        if version != SNAPSHOT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = u16::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?) as usize;
        if !(1..=2).contains(&dim) {
            return Err(bad(&format!("unsupported dimension {dim}")));
        }
        let sizes: Vec<u32> = (0..dim)
            .map(|_| r.array().map(u32::from_le_bytes))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("truncated header"))?;
        let time = f64::from_le_bytes(r.array().ok_or_else(|| bad("truncated header"))?);
        let tag = r.take(1).ok_or_else(|| bad("truncated header"))?[0];
        if tag != DTYPE_F64_LE {
            return Err(bad(&format!("unknown dtype tag {tag}")));
        }
        let len: usize = sizes.iter().map(|&n| n as usize).product();
        let payload = &b[r.pos..];
        if payload.len() != 8 * len {
            return Err(bad(&format!("payload has {} bytes, expected {}", payload.len(), 8 * len)));
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { sizes, time, data })
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.b.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }
}

/// Writes `step,t,value` rows. Floats use the shortest round-trip form.
pub fn write_ledger(path: &Path, rows: impl IntoIterator<Item = (usize, f64, f64)>) -> io::Result<()> {
    let mut s = String::from("step,t,value\n");
    for (n, t, v) in rows {
        s.push_str(&format!("{n},{t:e},{v:e}\n"));
    }
    fs::write(path, s)
}

pub fn read_ledger(path: &Path) -> io::Result<Vec<(usize, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let bad = |l: &str| io::Error::new(io::ErrorKind::InvalidData, format!("ledger {}: bad row `{l}`", path.display()));
    text.lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            let n = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(l))?;
            let t = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(l))?;
            let v = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(l))?;
            Ok((n, t, v))
        })
        .collect()
}

/// Everything needed to find and reproduce the outputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u16,
    pub sscl_version: String,
    pub config_hash: String,
    pub config_file: String,
    pub seed: u64,
    pub paths: usize,
    pub completed: Vec<u64>,
    pub aborted: Vec<u64>,
    pub steps: usize,
    pub dt: f64,
    pub ledgers: Vec<String>,
    pub snapshots: bool,
    pub kinetic: bool,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl Manifest {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let s = toml::to_string(self).expect("manifest is serializable");
        let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
        f.write_all(s.as_bytes())
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let s = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        toml::from_str(&s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}
