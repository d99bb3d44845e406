//! The `.pwt` raw tensor interchange format.
//!
//! All fields little-endian:
//!
//! | field    | type            | notes                                  |
//! |----------|-----------------|----------------------------------------|
//! | magic    | `[u8; 4]`       | `b"PWTK"`                              |
//! | version  | `u32`           | `1`                                    |
//! | dtype    | `u32`           | `0` = f32, `1` = f64                   |
//! | rank     | `u32`           | `1..=5`                                |
//! | extents  | `rank × u64`    |                                        |
//! | spacing  | `3 × f64`       | mm, `(z, y, x)`; zeros when not spatial |
//! | dt       | `f64`           | seconds; zero when rank < 4            |
//! | payload  | `product × dtype` | row-major                            |

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Spacing, Tensor, Volume3D, Volume4D, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"PWTK";
pub const VERSION: u32 = 1;

/// Decoded payload of a raw file.
#[derive(Debug, Clone, PartialEq)]
pub enum RawData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl RawData {
    pub fn dims(&self) -> &[usize] {
        match self {
            RawData::F32(t) => t.dims(),
            RawData::F64(t) => t.dims(),
        }
    }

    /// Single-precision view, converting from double if needed.
    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            RawData::F32(t) => t,
            RawData::F64(t) => t.cast(),
        }
    }
}

/// A tensor plus the physical metadata carried by the raw format.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub data: RawData,
    pub spacing: [f64; 3],
    pub dt: f64,
}

impl RawRecord {
    pub fn into_volume3d(self) -> Result<Volume3D> {
        let spacing = self.spacing;
        Volume3D::new(self.data.into_f32(), spacing)
    }

    pub fn into_volume4d(self) -> Result<Volume4D> {
        let (spacing, dt) = (self.spacing, self.dt);
        Volume4D::new(self.data.into_f32(), spacing, dt)
    }
}

/// Serializes a tensor with explicit metadata.
pub fn encode<T: Scalar>(tensor: &Tensor<T>, spacing: [f64; 3], dt: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * tensor.rank() + 32 + tensor.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&dt.to_le_bytes());
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn write_volume3d(volume: &Volume3D) -> Vec<u8> {
    encode(volume.tensor(), volume.spacing(), 0.0)
}

pub fn write_volume4d(volume: &Volume4D) -> Vec<u8> {
    encode(volume.tensor(), volume.spacing(), volume.dt())
}

/// Serializes a bare tensor (no spatial metadata).
pub fn write_tensor<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    encode(tensor, [0.0; 3], 0.0)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated raw tensor: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len().saturating_sub(self.pos)
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_payload<T: Scalar>(bytes: &[u8], dims: &[usize]) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::from_vec(dims, data)
}

/// Decodes one raw record and returns it with the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(RawRecord, usize)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad raw tensor magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported raw version {version}")));
    }
    let dtype = DType::from_code(c.u32()?)?;
    let rank = c.u32()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("invalid rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = c.u64()?;
        if d == 0 || d > usize::MAX as u64 {
            return Err(Error::Format(format!("invalid extent {d}")));
        }
        dims.push(d as usize);
    }
    let mut spacing = [0.0; 3];
    for s in &mut spacing {
        *s = c.f64()?;
    }
    let dt = c.f64()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let nbytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let payload = c.take(nbytes)?;
    let data = match dtype {
        DType::F32 => RawData::F32(decode_payload(payload, &dims)?),
        DType::F64 => RawData::F64(decode_payload(payload, &dims)?),
    };
    Ok((RawRecord { data, spacing, dt }, c.pos))
}

/// Decodes a buffer holding exactly one raw record.
pub fn read_raw(bytes: &[u8]) -> Result<RawRecord> {
    let (rec, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after raw tensor",
            bytes.len() - used
        )));
    }
    Ok(rec)
}

pub fn save(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<RawRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_raw(&bytes)
}

pub fn load_volume3d(path: impl AsRef<Path>) -> Result<Volume3D> {
    load(path)?.into_volume3d()
}

pub fn load_volume4d(path: impl AsRef<Path>) -> Result<Volume4D> {
    load(path)?.into_volume4d()
}

/// Spacing helper for records that are not spatial.
pub const NO_SPACING: Spacing = [0.0; 3];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_volume_layout() {
        let v = Volume3D::new(Tensor::from_vec(&[1, 1, 1], vec![0.5]).unwrap(), [1.0; 3]).unwrap();
        let bytes = write_volume3d(&v);
        // 16 header + 3 extents + 3 spacing + dt + one f32
        assert_eq!(bytes.len(), 16 + 3 * 8 + 3 * 8 + 8 + 4);
        assert_eq!(&bytes[..4], b"PWTK");
        assert_eq!(read_raw(&bytes).unwrap().into_volume3d().unwrap(), v);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_raw(&[]), Err(Error::Format(_))));
        let v = Tensor::<f32>::zeros(&[2, 2]);
        let mut bytes = write_tensor(&v);
        let header_only = bytes[..bytes.len() - 16].to_vec();
        assert!(matches!(read_raw(&header_only), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_raw(&bytes), Err(Error::Format(_))));
        let mut bytes = write_tensor(&v);
        bytes[4] = 2;
        assert!(matches!(read_raw(&bytes), Err(Error::Format(_))));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor<f32>> {
        proptest::collection::vec(1usize..4, 1..=5).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            proptest::collection::vec(any::<u32>(), n).prop_map(move |bits| {
                let data = bits.into_iter().map(f32::from_bits).collect();
                Tensor::from_vec(&dims, data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in arb_tensor(), sz in 0.1f64..5.0, dt in 0.0f64..3.0) {
            let bytes = encode(&t, [sz, 1.0, 2.0], dt);
            let rec = read_raw(&bytes).unwrap();
            prop_assert_eq!(rec.spacing, [sz, 1.0, 2.0]);
            prop_assert_eq!(rec.dt.to_bits(), dt.to_bits());
            let back = rec.data.into_f32();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
