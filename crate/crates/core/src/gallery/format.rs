//! Little-endian gallery file.
//!
//! ```text
//! magic "ISRG" | version u32 = 1 | rows u16 | cols u16 | class count u32
//! per class:
//!   id length u16 | id bytes (UTF-8) | N u32 | perturbed u8 | seed u64 (0 if absent)
//!   matrix: tau*N f64, column-major
//!   pinv present u8 | pinv: N*tau f64, row-major (if present)
//! CRC-32 (IEEE) of every preceding byte, u32
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use super::{Gallery, Regressor};
use crate::preprocess::Resolution;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ISRG";
pub const VERSION: u32 = 1;

pub fn serialize(gallery: &Gallery) -> Result<Vec<u8>> {
    let res = gallery.resolution();
    let side = |v: usize| {
        u16::try_from(v).map_err(|_| Error::invalid(format!("resolution side {v} does not fit in u16")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&side(res.rows)?.to_le_bytes());
    out.extend_from_slice(&side(res.cols)?.to_le_bytes());
    out.extend_from_slice(&(gallery.classes().len() as u32).to_le_bytes());
    for reg in gallery.classes() {
        let id = reg.class_id().as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::invalid(format!("class id `{}` is too long", reg.class_id())))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(reg.n_images() as u32).to_le_bytes());
        out.push(u8::from(reg.is_perturbed()));
        out.extend_from_slice(&reg.perturbation_seed().unwrap_or(0).to_le_bytes());
        for v in reg.matrix().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match reg.pinv() {
            Some(p) => {
                out.push(1);
                for i in 0..p.nrows() {
                    for j in 0..p.ncols() {
                        out.extend_from_slice(&p[(i, j)].to_le_bytes());
                    }
                }
            }
            None => out.push(0),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Gallery> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = usize::from(r.u16()?);
    let cols = usize::from(r.u16()?);
    let resolution = Resolution::new(rows, cols).map_err(|e| Error::Format(e.to_string()))?;
    let tau = resolution.tau();
    let count = r.u32()?;
    let mut classes = Vec::new();
    for _ in 0..count {
        let id_len = usize::from(r.u16()?);
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::Format("class id is not UTF-8".into()))?
            .to_string();
        let n = r.u32()? as usize;
        let perturbed = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad perturbed flag {b}"))),
        };
        let seed = r.u64()?;
        let matrix = DMatrix::from_vec(tau, n, r.f64s(tau * n)?);
        let pinv = match r.u8()? {
            0 => None,
            1 => Some(DMatrix::from_row_slice(n, tau, &r.f64s(n * tau)?)),
            b => return Err(Error::Format(format!("bad pinv flag {b}"))),
        };
        let reg = Regressor::from_parts(id, matrix, perturbed.then_some(seed), pinv)
            .map_err(|e| Error::Format(e.to_string()))?;
        classes.push(reg);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes before CRC".into()));
    }
    Gallery::new(resolution, classes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_file(gallery: &Gallery, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(gallery)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Gallery> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
    deserialize(&bytes)
}
