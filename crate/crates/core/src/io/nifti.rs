//! NIfTI-1 ingestion.
//!
//! Only the header fields needed to place voxels in index space are
//! consumed: `dim`, `datatype`, `pixdim`, `vox_offset`, `scl_slope`,
//! `scl_inter` and `xyzt_units`. Orientation matrices are ignored. Both byte
//! orders are accepted (detected from `sizeof_hdr`) and gzip-compressed
//! streams are inflated transparently.

use std::io::Read;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Volume3D, Volume4D};

pub const HEADER_SIZE: usize = 348;
pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// NIfTI datatype codes this reader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiType {
    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => NiftiType::Uint8,
            4 => NiftiType::Int16,
            8 => NiftiType::Int32,
            16 => NiftiType::Float32,
            64 => NiftiType::Float64,
            other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            NiftiType::Uint8 => 2,
            NiftiType::Int16 => 4,
            NiftiType::Int32 => 8,
            NiftiType::Float32 => 16,
            NiftiType::Float64 => 64,
        }
    }

    pub fn size(self) -> usize {
        match self {
            NiftiType::Uint8 => 1,
            NiftiType::Int16 => 2,
            NiftiType::Int32 => 4,
            NiftiType::Float32 => 4,
            NiftiType::Float64 => 8,
        }
    }
}

/// The consumed subset of a NIfTI-1 header.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub magic: [u8; 4],
    pub little_endian: bool,
}

impl NiftiHeader {
    /// Header for a single-file (`n+1`) image with unit spacing.
    pub fn new(dims: &[usize], datatype: NiftiType) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = dims.len() as i16;
        for (i, &d) in dims.iter().enumerate() {
            dim[i + 1] = d as i16;
        }
        let mut pixdim = [1.0f32; 8];
        pixdim[0] = 1.0;
        Self {
            dim,
            datatype: datatype.code(),
            bitpix: (datatype.size() * 8) as i16,
            pixdim,
            vox_offset: 352.0,
            scl_slope: 0.0,
            scl_inter: 0.0,
            xyzt_units: 2 | 8,
            magic: *MAGIC_SINGLE,
            little_endian: true,
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Format(format!(
                "NIfTI header needs {HEADER_SIZE} bytes, got {}",
                bytes.len()
            )));
        }
        let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let little_endian = if le == HEADER_SIZE as i32 {
            true
        } else if be == HEADER_SIZE as i32 {
            false
        } else {
            return Err(Error::Format(format!("sizeof_hdr is {le}, expected 348")));
        };
        let r = Fields {
            bytes,
            little_endian,
        };
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic != MAGIC_SINGLE && &magic != MAGIC_PAIR {
            return Err(Error::Format(format!("bad NIfTI magic {magic:?}")));
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = r.i16(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = r.f32(76 + 4 * i);
        }
        Ok(Self {
            dim,
            datatype: r.i16(70),
            bitpix: r.i16(72),
            pixdim,
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            xyzt_units: bytes[123],
            magic,
            little_endian,
        })
    }

    /// Serializes the consumed fields into a 348-byte header; all other
    /// fields are zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; HEADER_SIZE];
        let mut w = FieldsMut {
            bytes: &mut out,
            little_endian: self.little_endian,
        };
        w.i32(0, HEADER_SIZE as i32);
        for (i, &d) in self.dim.iter().enumerate() {
            w.i16(40 + 2 * i, d);
        }
        w.i16(70, self.datatype);
        w.i16(72, self.bitpix);
        for (i, &p) in self.pixdim.iter().enumerate() {
            w.f32(76 + 4 * i, p);
        }
        w.f32(108, self.vox_offset);
        w.f32(112, self.scl_slope);
        w.f32(116, self.scl_inter);
        out[123] = self.xyzt_units;
        out[344..348].copy_from_slice(&self.magic);
        out
    }

    fn spatial_scale(&self) -> f64 {
        match self.xyzt_units & 0x07 {
            1 => 1000.0,
            3 => 0.001,
            _ => 1.0,
        }
    }

    fn time_scale(&self) -> f64 {
        match self.xyzt_units & 0x38 {
            16 => 1e-3,
            24 => 1e-6,
            _ => 1.0,
        }
    }

    /// `(z, y, x)` spacing in millimetres; non-positive entries become 1.
    pub fn spacing_mm(&self) -> [f64; 3] {
        let s = self.spatial_scale();
        let p = |i: usize| {
            let v = self.pixdim[i] as f64;
            if v > 0.0 && v.is_finite() {
                v * s
            } else {
                1.0
            }
        };
        [p(3), p(2), p(1)]
    }

    /// Inter-acquisition interval in seconds; non-positive becomes 1.
    pub fn dt_seconds(&self) -> f64 {
        let v = self.pixdim[4] as f64;
        if v > 0.0 && v.is_finite() {
            v * self.time_scale()
        } else {
            1.0
        }
    }
}

struct Fields<'a> {
    bytes: &'a [u8],
    little_endian: bool,
}

impl Fields<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        self.bytes[at..at + N].try_into().unwrap()
    }
    fn i16(&self, at: usize) -> i16 {
        let a = self.arr::<2>(at);
        if self.little_endian {
            i16::from_le_bytes(a)
        } else {
            i16::from_be_bytes(a)
        }
    }
    fn f32(&self, at: usize) -> f32 {
        let a = self.arr::<4>(at);
        if self.little_endian {
            f32::from_le_bytes(a)
        } else {
            f32::from_be_bytes(a)
        }
    }
}

struct FieldsMut<'a> {
    bytes: &'a mut [u8],
    little_endian: bool,
}

impl FieldsMut<'_> {
    fn put(&mut self, at: usize, le: &[u8], be: &[u8]) {
        let src = if self.little_endian { le } else { be };
        self.bytes[at..at + src.len()].copy_from_slice(src);
    }
    fn i16(&mut self, at: usize, v: i16) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }
    fn i32(&mut self, at: usize, v: i32) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }
    fn f32(&mut self, at: usize, v: f32) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }
}

/// A parsed image: 3D map or 4D series.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Volume3(Volume3D),
    Volume4(Volume4D),
}

impl NiftiVolume {
    pub fn into_3d(self) -> Result<Volume3D> {
        match self {
            NiftiVolume::Volume3(v) => Ok(v),
            NiftiVolume::Volume4(_) => Err(Error::Rank {
                expected: "3".into(),
                found: 4,
            }),
        }
    }

    pub fn into_4d(self) -> Result<Volume4D> {
        match self {
            NiftiVolume::Volume4(v) => Ok(v),
            NiftiVolume::Volume3(_) => Err(Error::Rank {
                expected: "4".into(),
                found: 3,
            }),
        }
    }
}

fn inflate_if_gzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parses a `.nii` or `.nii.gz` byte stream.
///
/// For the two-file `ni1` variant the image bytes are expected to follow
/// the 348-byte header directly; see [`parse_nifti_pair`] for separate
/// buffers.
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    let bytes = inflate_if_gzip(bytes)?;
    let header = NiftiHeader::parse(&bytes)?;
    let offset = if &header.magic == MAGIC_SINGLE {
        let off = header.vox_offset;
        if !(off >= HEADER_SIZE as f32) {
            return Err(Error::Format(format!("vox_offset {off} inside header")));
        }
        off as usize
    } else {
        HEADER_SIZE
    };
    decode(&header, bytes.get(offset..).unwrap_or(&[]))
}

/// Parses a detached `.hdr` / `.img` pair.
pub fn parse_nifti_pair(header_bytes: &[u8], image_bytes: &[u8]) -> Result<NiftiVolume> {
    let header_bytes = inflate_if_gzip(header_bytes)?;
    let image_bytes = inflate_if_gzip(image_bytes)?;
    let header = NiftiHeader::parse(&header_bytes)?;
    let off = header.vox_offset.max(0.0) as usize;
    decode(&header, image_bytes.get(off..).unwrap_or(&[]))
}

fn decode(header: &NiftiHeader, payload: &[u8]) -> Result<NiftiVolume> {
    let rank = header.dim[0];
    if rank != 3 && rank != 4 {
        return Err(Error::Rank {
            expected: "3 or 4".into(),
            found: rank.max(0) as usize,
        });
    }
    let dtype = NiftiType::from_code(header.datatype)?;
    let mut extents = Vec::with_capacity(4);
    for i in 1..=rank as usize {
        let d = header.dim[i];
        if d < 1 {
            return Err(Error::Format(format!("dim[{i}] = {d} is not positive")));
        }
        extents.push(d as usize);
    }
    let count: usize = extents.iter().product();
    let need = count * dtype.size();
    if payload.len() < need {
        return Err(Error::Format(format!(
            "payload holds {} bytes, dims need {need}",
            payload.len()
        )));
    }
    let le = header.little_endian;
    let raw: Vec<f64> = payload[..need]
        .chunks_exact(dtype.size())
        .map(|c| read_value(dtype, c, le))
        .collect();
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    let scaled = slope != 0.0 && slope.is_finite();
    let data: Vec<f32> = raw
        .into_iter()
        .map(|v| {
            if scaled {
                (v * slope + inter) as f32
            } else {
                v as f32
            }
        })
        .collect();

    let spacing = header.spacing_mm();
    // NIfTI stores x fastest, which is row-major over (t, z, y, x)
    let [nx, ny, nz] = [extents[0], extents[1], extents[2]];
    if rank == 4 && extents[3] > 1 {
        let t = Tensor::from_vec(&[extents[3], nz, ny, nx], data)?;
        Ok(NiftiVolume::Volume4(Volume4D::new(
            t,
            spacing,
            header.dt_seconds(),
        )?))
    } else {
        let t = Tensor::from_vec(&[nz, ny, nx], data)?;
        Ok(NiftiVolume::Volume3(Volume3D::new(t, spacing)?))
    }
}

fn read_value(dtype: NiftiType, c: &[u8], le: bool) -> f64 {
    macro_rules! rd {
        ($t:ty) => {{
            let a = c.try_into().unwrap();
            (if le {
                <$t>::from_le_bytes(a)
            } else {
                <$t>::from_be_bytes(a)
            }) as f64
        }};
    }
    match dtype {
        NiftiType::Uint8 => c[0] as f64,
        NiftiType::Int16 => rd!(i16),
        NiftiType::Int32 => rd!(i32),
        NiftiType::Float32 => rd!(f32),
        NiftiType::Float64 => rd!(f64),
    }
}

/// Encodes a volume as single-file float32 NIfTI-1.
pub fn write_nifti(volume: &NiftiVolume) -> Vec<u8> {
    let (dims, spacing, dt, data): (Vec<usize>, [f64; 3], f64, &[f32]) = match volume {
        NiftiVolume::Volume3(v) => {
            let [z, y, x] = v.dims();
            (vec![x, y, z], v.spacing(), 0.0, v.data())
        }
        NiftiVolume::Volume4(v) => {
            let [t, z, y, x] = v.dims();
            (vec![x, y, z, t], v.spacing(), v.dt(), v.data())
        }
    };
    let mut header = NiftiHeader::new(&dims, NiftiType::Float32);
    header.pixdim[1] = spacing[2] as f32;
    header.pixdim[2] = spacing[1] as f32;
    header.pixdim[3] = spacing[0] as f32;
    if dt > 0.0 {
        header.pixdim[4] = dt as f32;
    }
    let mut out = header.to_bytes();
    out.extend_from_slice(&[0u8; 4]);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file(header: &NiftiHeader, payload: &[u8]) -> Vec<u8> {
        let mut out = header.to_bytes();
        out.extend_from_slice(&[0u8; 4]);
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn float32_header_dims() {
        let h = NiftiHeader::new(&[4, 4, 2], NiftiType::Float32);
        let payload: Vec<u8> = (0..32).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let v = parse_nifti(&file(&h, &payload)).unwrap().into_3d().unwrap();
        assert_eq!(v.dims(), [2, 4, 4]);
        assert_eq!(v.get(1, 0, 0), 16.0);
        assert_eq!(v.get(0, 1, 2), 6.0);
    }

    #[test]
    fn slope_and_intercept() {
        let mut h = NiftiHeader::new(&[1, 1, 1], NiftiType::Int16);
        h.scl_slope = 2.0;
        h.scl_inter = 1.0;
        let v = parse_nifti(&file(&h, &3i16.to_le_bytes()))
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(v.data(), &[7.0]);
    }

    #[test]
    fn error_paths() {
        let h = NiftiHeader::new(&[2, 2, 2], NiftiType::Float32);
        let short = file(&h, &[0u8; 8 * 4 - 1]);
        assert!(matches!(parse_nifti(&short), Err(Error::Format(_))));

        let mut bad = file(&h, &[0u8; 32]);
        bad[344] = b'x';
        assert!(matches!(parse_nifti(&bad), Err(Error::Format(_))));

        let mut h2 = h.clone();
        h2.datatype = 512;
        assert!(matches!(
            parse_nifti(&file(&h2, &[0u8; 64])),
            Err(Error::Unsupported(_))
        ));

        let h3 = NiftiHeader::new(&[2, 2], NiftiType::Float32);
        assert!(matches!(
            parse_nifti(&file(&h3, &[0u8; 16])),
            Err(Error::Rank { .. })
        ));
    }

    #[test]
    fn big_endian_and_gzip() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let mut h = NiftiHeader::new(&[2, 1, 1], NiftiType::Int32);
        h.little_endian = false;
        let payload: Vec<u8> = [5i32, -7].iter().flat_map(|v| v.to_be_bytes()).collect();
        let bytes = file(&h, &payload);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).unwrap();
        let gz = enc.finish().unwrap();
        let v = parse_nifti(&gz).unwrap().into_3d().unwrap();
        assert_eq!(v.data(), &[5.0, -7.0]);
    }

    #[test]
    fn four_d_series_and_units() {
        let mut h = NiftiHeader::new(&[2, 2, 1, 3], NiftiType::Uint8);
        h.pixdim[1] = 0.5;
        h.pixdim[3] = 3.0;
        h.pixdim[4] = 1500.0;
        h.xyzt_units = 2 | 16;
        let v = parse_nifti(&file(&h, &[1u8; 12]))
            .unwrap()
            .into_4d()
            .unwrap();
        assert_eq!(v.dims(), [3, 1, 2, 2]);
        assert_eq!(v.spacing(), [3.0, 1.0, 0.5]);
        assert!((v.dt() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn pair_variant() {
        let mut h = NiftiHeader::new(&[1, 1, 2], NiftiType::Float64);
        h.magic = *MAGIC_PAIR;
        h.vox_offset = 0.0;
        let img: Vec<u8> = [1.5f64, 2.5].iter().flat_map(|v| v.to_le_bytes()).collect();
        let v = parse_nifti_pair(&h.to_bytes(), &img)
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(v.data(), &[1.5, 2.5]);
    }

    #[test]
    fn writer_round_trip() {
        let v = Volume3D::from_fn([2, 3, 4], [2.0, 1.0, 0.5], |z, y, x| {
            (z * 12 + y * 4 + x) as f32
        })
        .unwrap();
        let back = parse_nifti(&write_nifti(&NiftiVolume::Volume3(v.clone())))
            .unwrap()
            .into_3d()
            .unwrap();
        assert_eq!(back, v);
    }

    fn arb_header() -> impl Strategy<Value = NiftiHeader> {
        (
            prop::sample::select(vec![2i16, 4, 8, 16, 64]),
            proptest::collection::vec(1i16..300, 4),
            proptest::collection::vec(0.01f32..10.0, 4),
            -5.0f32..5.0,
            -100.0f32..100.0,
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(dt, dims, pix, slope, inter, le, four)| {
                let rank = if four { 4 } else { 3 };
                let mut h = NiftiHeader::new(
                    &dims[..rank].iter().map(|&d| d as usize).collect::<Vec<_>>(),
                    NiftiType::from_code(dt).unwrap(),
                );
                h.pixdim[1..5].copy_from_slice(&pix[..4]);
                h.scl_slope = slope;
                h.scl_inter = inter;
                h.little_endian = le;
                h
            })
    }

    proptest! {
        #[test]
        fn consumed_header_fields_round_trip(h in arb_header()) {
            let back = NiftiHeader::parse(&h.to_bytes()).unwrap();
            prop_assert_eq!(back, h);
        }
    }
}
