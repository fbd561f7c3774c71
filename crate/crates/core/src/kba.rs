//! KBA1: a self-describing little-endian container for named numeric arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   : 4 bytes, b"KBA1"
//! version : u32 (currently 1)
//! count   : u32 (number of arrays)
//! per array:
//!   name_len : u32, then `name_len` bytes of UTF-8
//!   dtype    : u8 (0 = f64, 1 = u32)
//!   ndim     : u8
//!   dims     : ndim * u64
//!   payload  : product(dims) elements, row-major
//! ```
//!
//! Round trips are bit-exact: f64 payloads are stored via `to_le_bytes` of
//! the raw IEEE 754 encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"KBA1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum KbaArray {
    F64(ArrayD<f64>),
    U32(ArrayD<u32>),
}

impl KbaArray {
    pub fn dtype_name(&self) -> &'static str {
        match self {
            KbaArray::F64(_) => "f64",
            KbaArray::U32(_) => "u32",
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            KbaArray::F64(a) => a.shape(),
            KbaArray::U32(a) => a.shape(),
        }
    }
}

/// An ordered set of named arrays. Order is preserved so that writes are
/// reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KbaFile {
    entries: Vec<(String, KbaArray)>,
}

impl KbaFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_f64(&mut self, name: &str, array: ArrayD<f64>) {
        self.entries.push((name.to_string(), KbaArray::F64(array)));
    }

    pub fn push_u32(&mut self, name: &str, array: ArrayD<u32>) {
        self.entries.push((name.to_string(), KbaArray::U32(array)));
    }

    pub fn entries(&self) -> &[(String, KbaArray)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&KbaArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Fetch a required f64 array, with the expected number of dimensions.
    pub fn require_f64(&self, name: &str, ndim: usize) -> Result<&ArrayD<f64>> {
        match self.get(name) {
            Some(KbaArray::F64(a)) if a.ndim() == ndim => Ok(a),
            Some(other) => Err(Error::SchemaMismatch {
                detail: format!(
                    "array `{name}`: expected f64 with {ndim} dims, got {} with shape {:?}",
                    other.dtype_name(),
                    other.shape()
                ),
            }),
            None => Err(Error::SchemaMismatch {
                detail: format!("missing array `{name}`"),
            }),
        }
    }

    pub fn require_u32(&self, name: &str, ndim: usize) -> Result<&ArrayD<u32>> {
        match self.get(name) {
            Some(KbaArray::U32(a)) if a.ndim() == ndim => Ok(a),
            Some(other) => Err(Error::SchemaMismatch {
                detail: format!(
                    "array `{name}`: expected u32 with {ndim} dims, got {} with shape {:?}",
                    other.dtype_name(),
                    other.shape()
                ),
            }),
            None => Err(Error::SchemaMismatch {
                detail: format!("missing array `{name}`"),
            }),
        }
    }

    /// Scalar (1-element) u32 convenience accessor.
    pub fn require_u32_scalar(&self, name: &str) -> Result<u32> {
        let a = self.require_u32(name, 1)?;
        if a.len() != 1 {
            return Err(Error::SchemaMismatch {
                detail: format!("array `{name}`: expected a single u32, got {} values", a.len()),
            });
        }
        Ok(a[[0]])
    }

    pub fn require_f64_scalar(&self, name: &str) -> Result<f64> {
        let a = self.require_f64(name, 1)?;
        if a.len() != 1 {
            return Err(Error::SchemaMismatch {
                detail: format!("array `{name}`: expected a single f64, got {} values", a.len()),
            });
        }
        Ok(a[[0]])
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, array) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match array {
                KbaArray::F64(a) => {
                    w.write_all(&[0u8, a.ndim() as u8])?;
                    for &d in a.shape() {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    // as_standard_layout() guarantees row-major element order.
                    for v in a.as_standard_layout().iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                KbaArray::U32(a) => {
                    w.write_all(&[1u8, a.ndim() as u8])?;
                    for &d in a.shape() {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    for v in a.as_standard_layout().iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::SchemaMismatch {
                detail: format!("bad magic {magic:?}, expected {MAGIC:?} (`KBA1`)"),
            });
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::SchemaMismatch {
                detail: format!("unsupported version {version}"),
            });
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::SchemaMismatch {
                    detail: format!("array name length {name_len} is implausible"),
                });
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes).map_err(|e| Error::SchemaMismatch {
                detail: format!("array name is not UTF-8: {e}"),
            })?;
            let mut head = [0u8; 2];
            r.read_exact(&mut head)?;
            let (dtype, ndim) = (head[0], head[1] as usize);
            let mut dims = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = read_u64(r)? as usize;
                len = len.checked_mul(d).ok_or_else(|| Error::SchemaMismatch {
                    detail: format!("array `{name}`: dims overflow"),
                })?;
                dims.push(d);
            }
            let array = match dtype {
                0 => {
                    let mut data = vec![0f64; len];
                    for v in data.iter_mut() {
                        let mut b = [0u8; 8];
                        r.read_exact(&mut b)?;
                        *v = f64::from_le_bytes(b);
                    }
                    KbaArray::F64(ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| {
                        Error::SchemaMismatch {
                            detail: format!("array `{name}`: {e}"),
                        }
                    })?)
                }
                1 => {
                    let mut data = vec![0u32; len];
                    for v in data.iter_mut() {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        *v = u32::from_le_bytes(b);
                    }
                    KbaArray::U32(ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| {
                        Error::SchemaMismatch {
                            detail: format!("array `{name}`: {e}"),
                        }
                    })?)
                }
                other => {
                    return Err(Error::SchemaMismatch {
                        detail: format!("array `{name}`: unknown dtype tag {other}"),
                    })
                }
            };
            entries.push((name, array));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?);
        Self::read_from(&mut r)
    }

    /// Serialize to an in-memory buffer. Used by determinism tests.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write cannot fail");
        buf
    }

    /// One manifest line per array: `name dtype dims`.
    pub fn manifest_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(name, a)| {
                let dims: Vec<String> = a.shape().iter().map(|d| d.to_string()).collect();
                format!("{name} {} {}", a.dtype_name(), dims.join("x"))
            })
            .collect()
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
