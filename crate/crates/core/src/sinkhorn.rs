//! Entropic transport between the uniform pixel histogram and a palette.
//!
//! A plan is a `C x N` nonnegative matrix (`N = H * W`). Starting from
//! `exp(f)`, each iteration rescales rows to the palette and then columns to
//! `1/N`. One iteration reproduces the activation exactly: `N * P` equals the
//! soft mask.

use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::saa::{NormalizeMode, NORMALIZATION_FLOOR};
use crate::tensor::{FeatureTensor, Shape, SoftMask, Tensor3};

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    classes: usize,
    pixels: usize,
    data: Vec<f64>,
    target: Palette,
}

impl TransportPlan {
    pub fn new(classes: usize, pixels: usize, data: Vec<f64>, target: Palette) -> Result<Self> {
        if target.classes() != classes {
            return Err(Error::shape(classes, target.classes()));
        }
        if pixels == 0 || data.len() != classes * pixels {
            return Err(Error::shape(
                format!("{classes}x{pixels} plan"),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidTensor(
                "transport plan entries must be finite and nonnegative".into(),
            ));
        }
        Ok(TransportPlan {
            classes,
            pixels,
            data,
            target,
        })
    }

    /// `exp(f)` with each row shifted by its maximum. Row rescaling removes
    /// the shift, so the iterates are unchanged.
    pub fn from_features(f: &FeatureTensor, target: &Palette) -> Result<Self> {
        let shape = f.shape();
        if shape.classes != target.classes() {
            return Err(Error::shape(
                format!("{} classes", target.classes()),
                format!("{} classes", shape.classes),
            ));
        }
        let mut data = f.as_slice().to_vec();
        let n = shape.pixels();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in row.iter_mut() {
                *v = (*v - max).exp();
            }
        }
        Ok(TransportPlan {
            classes: shape.classes,
            pixels: n,
            data,
            target: target.clone(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn target(&self) -> &Palette {
        &self.target
    }

    pub fn get(&self, class: usize, pixel: usize) -> f64 {
        self.data[class * self.pixels + pixel]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data
            .chunks(self.pixels)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.pixels];
        for row in self.data.chunks(self.pixels) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// L1 distance between the row sums and the palette.
    pub fn row_residual(&self) -> f64 {
        self.row_sums()
            .iter()
            .zip(self.target.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// L1 distance between the column sums and the uniform histogram.
    pub fn column_residual(&self) -> f64 {
        let r = 1.0 / self.pixels as f64;
        self.column_sums().iter().map(|s| (s - r).abs()).sum()
    }

    /// Whether every row and column marginal is within `tol` of its target.
    pub fn is_admissible(&self, tol: f64) -> bool {
        let r = 1.0 / self.pixels as f64;
        self.row_sums()
            .iter()
            .zip(self.target.iter())
            .all(|(a, b)| (a - b).abs() <= tol)
            && self.column_sums().iter().all(|s| (s - r).abs() <= tol)
    }

    /// Rescales each row to its palette budget.
    pub fn scale_rows(&mut self, mode: NormalizeMode) -> Result<()> {
        let n = self.pixels;
        for (c, row) in self.data.chunks_mut(n).enumerate() {
            let sum: f64 = row.iter().sum();
            let denom = floored(sum, mode, || Error::ZeroRow { row: c })?;
            let scale = self.target[c];
            for v in row.iter_mut() {
                *v = *v / denom * scale;
            }
        }
        Ok(())
    }

    /// Rescales each column to mass `1/N`.
    pub fn scale_columns(&mut self, mode: NormalizeMode) -> Result<()> {
        let r = 1.0 / self.pixels as f64;
        let sums = self.column_sums();
        let mut denom = Vec::with_capacity(self.pixels);
        for (p, &s) in sums.iter().enumerate() {
            denom.push(floored(s, mode, || Error::ZeroColumn { column: p })?);
        }
        for row in self.data.chunks_mut(self.pixels) {
            for (v, d) in row.iter_mut().zip(&denom) {
                *v = *v / d * r;
            }
        }
        Ok(())
    }

    /// One row step followed by one column step.
    pub fn iterate(&mut self, mode: NormalizeMode) -> Result<()> {
        self.scale_rows(mode)?;
        self.scale_columns(mode)
    }

    /// `N * P` reshaped onto the `H x W` grid.
    pub fn to_soft_mask(&self, height: usize, width: usize) -> Result<SoftMask> {
        if height * width != self.pixels {
            return Err(Error::shape(self.pixels, height * width));
        }
        let n = self.pixels as f64;
        let t = Tensor3::new(
            Shape::new(self.classes, height, width),
            self.data.iter().map(|v| v * n).collect(),
        )?;
        Ok(SoftMask::new_unchecked(t))
    }
}

fn floored(sum: f64, mode: NormalizeMode, err: impl FnOnce() -> Error) -> Result<f64> {
    if sum < NORMALIZATION_FLOOR {
        match mode {
            NormalizeMode::Strict => Err(err()),
            NormalizeMode::Lenient => Ok(NORMALIZATION_FLOOR),
        }
    } else {
        Ok(sum)
    }
}

/// Runs `iterations` row-then-column scaling pairs from `exp(f)`.
pub fn sinkhorn(f: &FeatureTensor, t: &Palette, iterations: usize) -> Result<TransportPlan> {
    sinkhorn_with(f, t, iterations, NormalizeMode::Lenient)
}

pub fn sinkhorn_with(
    f: &FeatureTensor,
    t: &Palette,
    iterations: usize,
    mode: NormalizeMode,
) -> Result<TransportPlan> {
    if iterations == 0 {
        return Err(Error::ZeroIterations);
    }
    let mut plan = TransportPlan::from_features(f, t)?;
    for _ in 0..iterations {
        plan.iterate(mode)?;
    }
    Ok(plan)
}
