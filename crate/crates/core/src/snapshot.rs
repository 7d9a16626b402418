// SPDX-License-Identifier: Apache-2.0

//! Binary field snapshots.
//!
//! Layout: a 32-byte header (`b"PFLD"`, format version `u32`, `n1..n4` as
//! `u32`, a face code byte, 7 bytes of padding) followed by the values as
//! little-endian `f64` in storage order. Face codes: 0 volume, 1 lower,
//! 2 upper, 3 both.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BoundaryField, Face, Grid, ScalarField};

const MAGIC: &[u8; 4] = b"PFLD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Volume(ScalarField),
    Boundary(BoundaryField),
}

impl Snapshot {
    pub fn grid(&self) -> &Grid {
        match self {
            Snapshot::Volume(f) => f.grid(),
            Snapshot::Boundary(b) => b.grid(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Snapshot::Volume(f) => f.values(),
            Snapshot::Boundary(b) => b.values(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Snapshot::Volume(_) => 0,
            Snapshot::Boundary(b) => match b.face() {
                Face::Lower => 1,
                Face::Upper => 2,
                Face::Both => 3,
            },
        }
    }
}

/// Header contents without the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub dims: [usize; 4],
    /// `None` for a volume field.
    pub face: Option<Face>,
}

pub fn write_snapshot<W: Write>(out: &mut W, snap: &Snapshot) -> Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    for (i, n) in snap.grid().dims().iter().enumerate() {
        let n =
            u32::try_from(*n).map_err(|_| Error::Snapshot(format!("dimension {n} exceeds u32")))?;
        header[8 + 4 * i..12 + 4 * i].copy_from_slice(&n.to_le_bytes());
    }
    header[24] = snap.code();
    out.write_all(&header)?;
    let mut payload = Vec::with_capacity(8 * snap.values().len());
    for v in snap.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;
    Ok(())
}

fn parse_header(bytes: &[u8]) -> Result<SnapshotHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Snapshot(format!(
            "truncated header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let dims = [
        word(8) as usize,
        word(12) as usize,
        word(16) as usize,
        word(20) as usize,
    ];
    let face = match bytes[24] {
        0 => None,
        1 => Some(Face::Lower),
        2 => Some(Face::Upper),
        3 => Some(Face::Both),
        c => return Err(Error::Snapshot(format!("unknown face code {c}"))),
    };
    Ok(SnapshotHeader { dims, face })
}

/// Reads a snapshot; its dimensions must match `grid`.
pub fn read_snapshot<R: Read>(input: &mut R, grid: Grid) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let header = parse_header(&bytes)?;
    if header.dims != grid.dims() {
        return Err(Error::Snapshot(format!(
            "snapshot grid {:?} does not match configured grid {:?}",
            header.dims,
            grid.dims()
        )));
    }
    let expected = match header.face {
        None => grid.len(),
        Some(f) => grid.face_len() * f.count(),
    };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * expected {
        return Err(Error::Snapshot(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            8 * expected
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(match header.face {
        None => Snapshot::Volume(ScalarField::from_vec(grid, values)?),
        Some(f) => Snapshot::Boundary(BoundaryField::from_vec(grid, f, values)?),
    })
}

/// Reads only the header, for inspection without a known grid.
pub fn read_snapshot_header(path: &Path) -> Result<SnapshotHeader> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = [0u8; HEADER_LEN];
    file.read_exact(&mut bytes)
        .map_err(|_| Error::Snapshot(format!("{}: truncated header", path.display())))?;
    parse_header(&bytes)
}

pub fn write_snapshot_file(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshot(&mut file, snap)?;
    file.flush()?;
    Ok(())
}

pub fn read_snapshot_file(path: &Path, grid: Grid) -> Result<Snapshot> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))?;
    read_snapshot(&mut file, grid).map_err(|e| match e {
        Error::Snapshot(m) => Error::Snapshot(format!("{}: {m}", path.display())),
        other => other,
    })
}
