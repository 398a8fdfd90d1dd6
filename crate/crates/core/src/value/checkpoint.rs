//! Flat binary checkpoints.
//!
//! Layout (all little-endian): magic `LDCK`, `u32` version, `u32` kind,
//! `u32` layer count followed by that many `u64` sizes, `f64` gamma, `f64` dt,
//! `u32` extra count followed by that many `f64`, `u64` parameter count
//! followed by the parameters as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Mlp = 0,
    Grid = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Layer sizes for networks, node counts per dimension for grids.
    pub sizes: Vec<u64>,
    pub gamma: f64,
    pub dt: f64,
    /// Kind-specific numbers (grid box bounds, side-input layout, ...).
    pub extra: Vec<f64>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&s.to_le_bytes())?;
        }
        w.write_all(&self.gamma.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.extra.len() as u32).to_le_bytes())?;
        for e in &self.extra {
            w.write_all(&e.to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Io("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Io(format!("unsupported checkpoint version {version}")));
        }
        let kind = match read_u32(&mut r)? {
            0 => CheckpointKind::Mlp,
            1 => CheckpointKind::Grid,
            k => return Err(Error::Io(format!("unknown checkpoint kind {k}"))),
        };
        let n_sizes = read_u32(&mut r)? as usize;
        let sizes = (0..n_sizes).map(|_| read_u64(&mut r)).collect::<Result<_>>()?;
        let gamma = read_f64(&mut r)?;
        let dt = read_f64(&mut r)?;
        let n_extra = read_u32(&mut r)? as usize;
        let extra = (0..n_extra).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
        let n_params = read_u64(&mut r)? as usize;
        let params = (0..n_params).map(|_| read_f64(&mut r)).collect::<Result<_>>()?;
        Ok(Self {
            kind,
            sizes,
            gamma,
            dt,
            extra,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
