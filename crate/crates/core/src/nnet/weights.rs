//! Binary parameter container.
//!
//! Layout, all little-endian: `"SLQI"`, version `u16`, tag `u8` (branch id or
//! [`FUSION_TAG`]), input side `u16`, tensor count `u32`, then per tensor its
//! rank `u32` and extents `u32…`, then every tensor's `f32` payload in order.

use super::tensor::Tensor;
use super::NnetError;

pub const MAGIC: &[u8; 4] = b"SLQI";
pub const FORMAT_VERSION: u16 = 1;
pub const FUSION_TAG: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub tag: u8,
    pub input_side: u16,
    pub tensors: Vec<Tensor<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| NnetError::WeightFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NnetError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, NnetError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

impl WeightFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.tag);
        out.extend_from_slice(&self.input_side.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnetError::WeightFormat("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(NnetError::WeightFormat(format!(
                "unsupported version {version}"
            )));
        }
        let tag = r.u8()?;
        let input_side = r.u16()?;
        let count = r.u32()? as usize;
        let mut shapes = Vec::new();
        for _ in 0..count {
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(NnetError::WeightFormat(format!(
                    "tensor rank {rank} too large"
                )));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u32().map(|e| e as usize))
                .collect::<Result<_, _>>()?;
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| NnetError::WeightFormat("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(NnetError::WeightFormat(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            tag,
            input_side,
            tensors,
        })
    }
}
