use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Dense `(batch, channels, spatial...)` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.len() < 3 || shape.iter().product::<usize>() != data.len() || data.is_empty() {
            return Err(Error::InvalidShape {
                shape,
                reason: "need (batch, channels, spatial...) with matching data length",
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    /// Single-channel batch from fields of equal shape.
    pub fn from_fields(fields: &[&ScalarField]) -> Result<Self> {
        let first = fields.first().ok_or(Error::TooFew { needed: 1, got: 0 })?;
        let mut shape = vec![fields.len(), 1];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(shape.iter().product());
        for f in fields {
            first.require_same_shape(f)?;
            data.extend(f.data().iter().map(|&v| T::from_f64(v as f64)));
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements of one batch item.
    pub fn sample_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Batch item `b` of a single-channel tensor as a field.
    pub fn to_field(&self, b: usize) -> Result<ScalarField> {
        if self.shape[1] != 1 {
            return Err(Error::invalid("only single-channel tensors convert to fields"));
        }
        ScalarField::new(
            self.shape[2..].to_vec(),
            self.sample(b).iter().map(|v| v.as_f64() as f32).collect(),
        )
    }
}
