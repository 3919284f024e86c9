//! Little-endian binary formats shared by every module.
//!
//! Tensor record (`MSTN`):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MSTN"
//! 4       4           u32 format version (1)
//! 8       4           u32 ndim
//! 12      8 * ndim    u64 dims, outermost first
//! ..      8 * prod    f64 values, row-major
//! ```
//!
//! Tensor archive (`MSTA`), used for model parameters:
//!
//! ```text
//! 0       4           magic "MSTA"
//! 4       4           u32 format version (1)
//! 8       4           u32 entry count
//! then per entry:     u32 name length, UTF-8 name, u32 ndim, u64 dims, f64 values
//! ```
//!
//! Entries keep insertion order.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MSTN";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"MSTA";
pub const FORMAT_VERSION: u32 = 1;

// Guards against absurd allocations when reading corrupt files.
const MAX_ELEMENTS: u64 = 1 << 32;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub(crate) fn write_f64s<'a, W: Write>(w: &mut W, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn write_body<W: Write>(w: &mut W, t: &ArrayD<f64>) -> Result<()> {
    write_u32(w, t.ndim() as u32)?;
    for &d in t.shape() {
        write_u64(w, d as u64)?;
    }
    write_f64s(w, t.iter())
}

fn read_body<R: Read>(r: &mut R) -> Result<ArrayD<f64>> {
    let ndim = read_u32(r)? as usize;
    if ndim > 8 {
        return Err(Error::Format(format!("ndim {ndim} too large")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut total: u64 = 1;
    for _ in 0..ndim {
        let d = read_u64(r)?;
        total = total.saturating_mul(d);
        dims.push(d as usize);
    }
    if total > MAX_ELEMENTS {
        return Err(Error::Format(format!("tensor with {total} elements rejected")));
    }
    let data = read_f64s(r, total as usize)?;
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Format(e.to_string()))
}

/// Write one tensor record.
pub fn write_tensor<W: Write>(w: &mut W, t: &ArrayD<f64>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_body(w, t)
}

/// Read one tensor record.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<ArrayD<f64>> {
    expect_magic(r, TENSOR_MAGIC)?;
    read_body(r)
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: ArrayD<f64>) -> &mut Self {
        self.entries.push((name.into(), t));
        self
    }

    pub fn push_matrix(&mut self, name: &str, m: &Array2<f64>) -> &mut Self {
        self.push(name, m.clone().into_dyn())
    }

    pub fn push_vector(&mut self, name: &str, v: &Array1<f64>) -> &mut Self {
        self.push(name, v.clone().into_dyn())
    }

    pub fn push_scalar(&mut self, name: &str, v: f64) -> &mut Self {
        self.push(name, Array1::from_elem(1, v).into_dyn())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("archive has no entry {name:?}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        self.get(name)?
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        self.get(name)?
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.vector(name)?;
        if v.len() != 1 {
            return Err(Error::Format(format!("{name}: expected scalar")));
        }
        Ok(v[0])
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(ARCHIVE_MAGIC)?;
        write_u32(w, FORMAT_VERSION)?;
        write_u32(w, self.entries.len() as u32)?;
        for (name, t) in &self.entries {
            write_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_body(w, t)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, ARCHIVE_MAGIC)?;
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(Error::Format("entry name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            entries.push((name, read_body(r)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tensor_layout_is_little_endian_row_major() {
        let t = array![[1.0, 2.0], [3.0, 4.0]].into_dyn();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"MSTN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), 2.0);
        assert_eq!(buf.len(), 28 + 32);
        assert_eq!(read_tensor(&mut &buf[..]).unwrap(), t);
    }

    #[test]
    fn archive_keeps_order_and_rejects_bad_magic() {
        let mut a = TensorArchive::new();
        a.push_matrix("w", &array![[1.0, -2.0]]).push_scalar("k", 3.0);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let back = TensorArchive::read(&mut &buf[..]).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["w", "k"]);
        assert_eq!(back.scalar("k").unwrap(), 3.0);
        buf[0] = b'X';
        assert!(matches!(TensorArchive::read(&mut &buf[..]), Err(Error::Format(_))));
    }
}
