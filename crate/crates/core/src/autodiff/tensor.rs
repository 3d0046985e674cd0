use crate::error::{Error, Result};
use num_traits::Float;
use std::fmt::{Debug, Display};

/// Element type of the engine. The run mode picks `f64` (tests, gradient
/// checks, reproducibility) or `f32` (faster training); everything numeric
/// is generic over this trait.
pub trait Real:
    Float + Debug + Display + Send + Sync + serde::Serialize + serde::de::DeserializeOwned + 'static
{
    const WIDTH: FloatWidth;

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FloatWidth {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl FloatWidth {
    pub fn byte_len(self) -> usize {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }
}

impl std::fmt::Display for FloatWidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FloatWidth::F32 => write!(f, "f32"),
            FloatWidth::F64 => write!(f, "f64"),
        }
    }
}

impl Real for f32 {
    const WIDTH: FloatWidth = FloatWidth::F32;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32 slice"))
    }
}

impl Real for f64 {
    const WIDTH: FloatWidth = FloatWidth::F64;

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64 slice"))
    }
}

/// Convert an f64 literal into the active float width.
#[inline]
pub fn fl<F: Real>(x: f64) -> F {
    F::from(x).expect("f64 converts into the active float width")
}

/// Dense row-major array with a shape. Entries are validated finite at
/// creation; NaN or Inf anywhere fails fast with the offending value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Real> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Domain {
                op: "tensor",
                msg: format!("zero-sized dimension in shape {shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        for &x in &data {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("tensor of shape {shape:?}"),
                    value: x.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); numel],
            requires_grad: false,
        }
    }

    pub fn scalar(x: F) -> Result<Self> {
        Tensor::new(vec![1], vec![x])
    }

    pub fn vector(data: Vec<F>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&x| fl(x)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension {
                op: "dims2",
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64().unwrap()).collect()
    }

    /// Fails if any entry became NaN/Inf since creation (in-place updates
    /// bypass the constructor check).
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for &x in &self.data {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: context.to_string(),
                    value: x.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }
}
