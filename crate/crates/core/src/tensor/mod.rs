//! Minimal dense-tensor engine: the value type, the differentiable graph, and
//! the convolution/pooling kernels behind it.

pub mod gradcheck;
pub mod graph;
pub mod kernels;

use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar types tensors can hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Element scalar: `f32` or `f64`.
///
/// Gradcheck always runs in `f64`; training precision is selected per run.
pub trait Element:
    Float + AddAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: Dtype;
    fn from64(v: f64) -> Self;
    fn into64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn into64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn into64(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array, row-major, canonical image layout B×C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dim in {dims:?}")));
        }
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} values, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// The four dims of an image tensor, or an error naming the offender.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!("expected 4-d tensor, got {:?}", self.dims))),
        }
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::from64(v.into64())).collect(),
        }
    }

    /// Elementwise `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "add_assign {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Serialization: named tensor records inside checkpoint files.
//
// Record layout (little-endian):
//   u16  name length, then UTF-8 name bytes
//   u8   dtype (0 = f32, 1 = f64)
//   u8   rank
//   u32  per dim
//   then numel raw LE values
// ---------------------------------------------------------------------------

pub fn write_tensor<T: Element, W: Write>(w: &mut W, name: &str, t: &Tensor<T>) -> Result<()> {
    let nb = name.as_bytes();
    if nb.len() > u16::MAX as usize {
        return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
    }
    w.write_all(&(nb.len() as u16).to_le_bytes())?;
    w.write_all(nb)?;
    w.write_all(&[match T::DTYPE {
        Dtype::F32 => 0u8,
        Dtype::F64 => 1u8,
    }])?;
    if t.dims.len() > u8::MAX as usize {
        return Err(Error::Checkpoint("tensor rank exceeds u8".into()));
    }
    w.write_all(&[t.dims.len() as u8])?;
    for &d in &t.dims {
        if d > u32::MAX as usize {
            return Err(Error::Checkpoint("tensor dim exceeds u32".into()));
        }
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match T::DTYPE {
        Dtype::F32 => {
            for &v in &t.data {
                w.write_all(&(v.into64() as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in &t.data {
                w.write_all(&v.into64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads one tensor record written by [`write_tensor`]. The stored dtype must
/// match `T` exactly; checkpoints never silently convert precision.
pub fn read_tensor<T: Element, R: Read>(r: &mut R) -> Result<(String, Tensor<T>)> {
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let name_len = u16::from_le_bytes(b2) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)?;
    let dtype = match b1[0] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        x => return Err(Error::Checkpoint(format!("unknown dtype tag {x}"))),
    };
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "tensor '{}' stored as {}, expected {}",
            name,
            dtype.name(),
            T::DTYPE.name()
        )));
    }
    r.read_exact(&mut b1)?;
    let rank = b1[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    let mut b4 = [0u8; 4];
    for _ in 0..rank {
        r.read_exact(&mut b4)?;
        dims.push(u32::from_le_bytes(b4) as usize);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        Dtype::F32 => {
            for _ in 0..n {
                r.read_exact(&mut b4)?;
                data.push(T::from64(f32::from_le_bytes(b4) as f64));
            }
        }
        Dtype::F64 => {
            let mut b8 = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b8)?;
                data.push(T::from64(f64::from_le_bytes(b8)));
            }
        }
    }
    Ok((name, Tensor::new(dims, data)?))
}
