//! Class-proportion vectors on the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted deviation of a raw vector's sum from 1 before it is renormalized.
pub const PALETTE_SUM_TOLERANCE: f64 = 1e-6;

/// Target class proportions: nonnegative, summing to 1, at least two classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Palette(Vec<f64>);

impl Palette {
    /// Validates a raw vector and renormalizes it exactly onto the simplex.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        validate_palette(values)
    }

    /// Uniform palette over `classes` classes.
    pub fn uniform(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses { got: classes });
        }
        Ok(Palette(vec![1.0 / classes as f64; classes]))
    }

    /// One-hot palette at `class`.
    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses { got: classes });
        }
        if class >= classes {
            return Err(Error::LabelOutOfRange {
                label: class as u64,
                classes,
            });
        }
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        Ok(Palette(v))
    }

    pub(crate) fn from_raw_unchecked(values: Vec<f64>) -> Self {
        Palette(values)
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl AsRef<[f64]> for Palette {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for Palette {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl<'de> Deserialize<'de> for Palette {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        validate_palette(raw).map_err(serde::de::Error::custom)
    }
}

/// Accepts `values` iff every entry is finite and nonnegative, there are at
/// least two entries, and the sum is within [`PALETTE_SUM_TOLERANCE`] of 1.
/// Accepted vectors are divided by their sum.
pub fn validate_palette(values: Vec<f64>) -> Result<Palette> {
    if values.len() < 2 {
        return Err(Error::TooFewClasses { got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "palette" });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeEntry { index, value });
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PALETTE_SUM_TOLERANCE {
        return Err(Error::NotNormalized { sum });
    }
    Ok(Palette(values.into_iter().map(|v| v / sum).collect()))
}
