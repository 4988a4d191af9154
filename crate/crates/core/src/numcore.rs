//! Dense real vectors and seeded randomness.
//!
//! Every reduction here runs sequentially left to right so that a given input
//! always produces the same bits, regardless of how many runs execute
//! concurrently elsewhere.

use std::ops::Index;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter vector. Also used for gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self { values })
        } else {
            Err(Error::NonFinite("parameter vector"))
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// Construction path for values produced by arithmetic on finite inputs.
    /// Callers that can overflow check [`ParamVector::is_finite`] afterwards.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_raw(self.values.iter().map(|v| alpha * v).collect())
    }

    /// Euclidean norm, sequential accumulation.
    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }

    pub(crate) fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Error::check_len(self.len(), other.len())?;
        Ok(Self::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.values
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.values.iter()
    }
}

/// Inner product, accumulated sequentially from index 0.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    Error::check_len(a.len(), b.len())?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |acc, (x, y)| acc + x * y))
}

/// Returns `y + alpha * x`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    y.zip_map(x, |yi, xi| yi + alpha * xi)
}

/// Seeded ChaCha8 stream. The same seed yields the same sequence on every
/// platform and thread count.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed, e.g. one per purpose
    /// (data, init, shuffling) so that consuming one never shifts another.
    pub fn substream(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
