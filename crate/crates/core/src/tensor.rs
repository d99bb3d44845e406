//! Dense row-major tensors and the volume types built on them.
//!
//! A [`Tensor`] stores its scalars with the last axis varying fastest. The
//! imaging types wrap a tensor with physical metadata: [`Volume3D`] is a
//! `(Z, Y, X)` field with millimetre spacing, [`Volume4D`] is a `(T, Z, Y, X)`
//! acquisition series with an inter-acquisition interval in seconds.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Maximum number of axes a [`Tensor`] may carry.
pub const MAX_RANK: usize = 5;

/// Element precision tag, as written into the raw tensor format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real scalar usable as a tensor element: `f32` for training and
/// inference, `f64` for gradient checking.
pub trait Scalar:
    num_traits::Float
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// N-dimensional array, row-major, up to [`MAX_RANK`] axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::Shape(format!(
            "tensor rank must be in 1..={MAX_RANK}, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
    }
    Ok(dims.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_dims(dims)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    /// # Panics
    /// On invalid dims; use [`Tensor::from_vec`] for fallible construction.
    pub fn full(dims: &[usize], value: T) -> Self {
        let len = check_dims(dims).expect("valid dims");
        Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    /// Flat offset of a multi-index. Panics when out of bounds.
    pub fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.dims);
            flat = flat * d + i;
        }
        flat
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims, "add_assign dims mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sub-tensor along the leading axis: `self[i]`.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        if self.rank() < 2 {
            return Err(Error::Shape("index_axis0 needs rank >= 2".into()));
        }
        if i >= self.dims[0] {
            return Err(Error::Shape(format!(
                "index {i} out of range for leading extent {}",
                self.dims[0]
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        Ok(Self {
            dims: self.dims[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        check_dims(&dims)?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.dims != first.dims {
                return Err(Error::Shape(format!(
                    "stack dims mismatch: {:?} vs {:?}",
                    t.dims, first.dims
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims, data })
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }
}

pub(crate) fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Voxel spacing in millimetres, ordered `(z, y, x)`.
pub type Spacing = [f64; 3];

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "spacing must be strictly positive, got {spacing:?}"
        )))
    }
}

/// A `(Z, Y, X)` scalar field with voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    tensor: Tensor<f32>,
    spacing: Spacing,
}

impl Volume3D {
    pub fn new(tensor: Tensor<f32>, spacing: Spacing) -> Result<Self> {
        if tensor.rank() != 3 {
            return Err(Error::Rank {
                expected: "3".into(),
                found: tensor.rank(),
            });
        }
        check_spacing(spacing)?;
        Ok(Self { tensor, spacing })
    }

    pub fn zeros(dims: [usize; 3], spacing: Spacing) -> Result<Self> {
        Self::new(Tensor::zeros(&dims), spacing)
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(Tensor::from_vec(&dims, data)?, spacing)
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2]]
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.tensor.data_mut()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        let [_, ny, nx] = self.dims();
        self.tensor.data()[(z * ny + y) * nx + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            tensor: self.tensor.map(f),
            spacing: self.spacing,
        }
    }

    /// One axial slice as a `Y * X` row-major buffer.
    pub fn slice_z(&self, z: usize) -> &[f32] {
        let [_, ny, nx] = self.dims();
        &self.tensor.data()[z * ny * nx..(z + 1) * ny * nx]
    }
}

/// A `(T, Z, Y, X)` acquisition series.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    tensor: Tensor<f32>,
    spacing: Spacing,
    dt: f64,
}

impl Volume4D {
    pub fn new(tensor: Tensor<f32>, spacing: Spacing, dt: f64) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::Rank {
                expected: "4".into(),
                found: tensor.rank(),
            });
        }
        if tensor.dims()[0] < 2 {
            return Err(Error::Shape(
                "a 4D series needs at least two time slices".into(),
            ));
        }
        check_spacing(spacing)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "acquisition interval must be positive, got {dt}"
            )));
        }
        Ok(Self {
            tensor,
            spacing,
            dt,
        })
    }

    /// `[T, Z, Y, X]`
    pub fn dims(&self) -> [usize; 4] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2], d[3]]
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        let [_, z, y, x] = self.dims();
        [z, y, x]
    }

    pub fn n_times(&self) -> usize {
        self.dims()[0]
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    /// The spatial volume at time index `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n: usize = self.spatial_dims().iter().product();
        &self.tensor.data()[t * n..(t + 1) * n]
    }

    pub fn frame_volume(&self, t: usize) -> Result<Volume3D> {
        Volume3D::new(self.tensor.index_axis0(t)?, self.spacing)
    }

    /// Reassembles a series from per-time frames sharing dims and spacing.
    pub fn from_frames(frames: &[Volume3D], dt: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("no frames".into()))?;
        let tensors: Vec<Tensor<f32>> = frames.iter().map(|f| f.tensor.clone()).collect();
        Self::new(Tensor::stack(&tensors)?, first.spacing, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1; 6], vec![0.0]).is_err());
    }

    #[test]
    fn volume_invariants() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(matches!(
            Volume3D::new(t, [1.0; 3]),
            Err(Error::Rank { found: 2, .. })
        ));
        let t = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(Volume3D::new(t, [1.0, 0.0, 1.0]).is_err());
        let t = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        assert!(Volume4D::new(t, [1.0; 3], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn flat_index_is_lexicographic(dims in proptest::collection::vec(1usize..4, 1..=5)) {
            let t = Tensor::<f32>::zeros(&dims);
            let mut idx = vec![0usize; dims.len()];
            let mut prev: Option<usize> = None;
            let mut done = false;
            while !done {
                let flat = t.flat_index(&idx);
                if let Some(p) = prev {
                    prop_assert!(flat > p);
                }
                prev = Some(flat);
                // odometer increment, last axis fastest
                done = true;
                for axis in (0..dims.len()).rev() {
                    idx[axis] += 1;
                    if idx[axis] < dims[axis] {
                        done = false;
                        break;
                    }
                    idx[axis] = 0;
                }
            }
            prop_assert_eq!(prev.unwrap() + 1, t.len());
        }
    }
}
