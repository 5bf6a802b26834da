//! Binary checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic        8 bytes  "M2PPOCKP"
//! version      u32
//! scalar size  u32      4 = f32, 8 = f64
//! architecture 5 x u64  in_channels rows cols conv_channels hidden
//! adam step    u64
//! tensors      u32 count, then per tensor:
//!                u32 name length, name, u32 rank, rank x u64 dims,
//!                values, first moments, second moments
//! sections     u32 count, then per section:
//!                u32 name length, name, u64 length, bytes
//! ```
//!
//! Sections carry free-form payloads such as the training config and
//! trainer state.

use super::{AdamState, Architecture, NnError, ParamSet, PolicyParams, Tensor};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"M2PPOCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: PolicyParams<T>,
    pub sections: BTreeMap<String, Vec<u8>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, NnError> {
        usize::try_from(self.u64()?).map_err(|_| NnError::Checkpoint("size overflow".into()))
    }

    fn name(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))
    }

    fn values<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>, NnError> {
        let bytes = self.take(n.checked_mul(T::BYTES).ok_or_else(|| NnError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: PolicyParams<T>) -> Self {
        Checkpoint { params, sections: BTreeMap::new() }
    }

    pub fn with_section(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.sections.insert(name.to_string(), bytes);
        self
    }

    pub fn section_str(&self, name: &str) -> Option<&str> {
        self.sections.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(3 * p.params.len() * T::BYTES + 1024);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        let a = p.arch;
        for v in [a.in_channels, a.rows, a.cols, a.conv_channels, a.hidden] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&p.adam.step.to_le_bytes());
        out.extend_from_slice(&(p.params.tensors.len() as u32).to_le_bytes());
        for (i, name) in p.param_names().iter().enumerate() {
            let t = &p.params.tensors[i];
            put_name(&mut out, name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for set in [&p.params, &p.adam.m, &p.adam.v] {
                for &v in &set.tensors[i].data {
                    v.write_le(&mut out);
                }
            }
        }
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, bytes) in &self.sections {
            put_name(&mut out, name);
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let size = r.u32()? as usize;
        if size != T::BYTES {
            return Err(NnError::Checkpoint(format!(
                "stored values are {size}-byte floats, expected {}-byte",
                T::BYTES
            )));
        }
        let arch = Architecture {
            in_channels: r.usize()?,
            rows: r.usize()?,
            cols: r.usize()?,
            conv_channels: r.usize()?,
            hidden: r.usize()?,
        };
        let mut params = PolicyParams::<T>::zeros(arch)?;
        let step = r.u64()?;
        let expected = arch.param_shapes();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(NnError::Checkpoint(format!("expected {} tensors, found {count}", expected.len())));
        }
        let mut sets: [Vec<Tensor<T>>; 3] = Default::default();
        for (name, shape) in &expected {
            let got = r.name()?;
            if got != *name {
                return Err(NnError::Checkpoint(format!("expected tensor `{name}`, found `{got}`")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
            if dims != *shape {
                return Err(NnError::ShapeMismatch { what: got, expected: shape.clone(), actual: dims });
            }
            let n = shape.iter().product();
            for set in sets.iter_mut() {
                set.push(Tensor { shape: shape.clone(), data: r.values(n)? });
            }
        }
        let [values, m, v] = sets;
        params.params = ParamSet { tensors: values };
        params.adam = AdamState { m: ParamSet { tensors: m }, v: ParamSet { tensors: v }, step };
        let mut sections = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let len = r.usize()?;
            sections.insert(name, r.take(len)?.to_vec());
        }
        if r.pos != buf.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { params, sections })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
