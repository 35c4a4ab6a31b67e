//! `RBT1` wire format: magic, four little-endian `u64` dimensions, then the
//! raw little-endian element payload.

use std::io::{Read, Write};

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RBT1";

impl<T: Scalar> Tensor<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 32 + self.len() * T::BYTES);
        out.extend_from_slice(MAGIC);
        for d in self.shape().0 {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *d = usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| Error::Format("dimension overflows usize".into()))?;
        }
        let shape = Shape(dims);
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("shape {shape} overflows")))?;
        let mut payload = vec![0u8; numel * T::BYTES];
        r.read_exact(&mut payload)?;
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::from_vec(shape, data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor",
                cursor.len()
            )));
        }
        Ok(t)
    }
}
