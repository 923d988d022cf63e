//! Dense class-by-pixel tensors and the validated wrappers used along the
//! activation pipeline.
//!
//! Storage is row-major over `(class, row, column)`, so channel `c` is the
//! contiguous slice `data[c * H * W .. (c + 1) * H * W]` and flattening the
//! spatial grid into `N = H * W` pixels is a reinterpretation of the same
//! buffer.

use std::fmt;

use crate::error::{Error, Result};
use crate::palette::Palette;

/// Tolerance for the sum-to-one invariants of masks and densities.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(classes: usize, height: usize, width: usize) -> Self {
        Shape {
            classes,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.classes * self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_classes(&self, classes: usize) -> Self {
        Shape { classes, ..*self }
    }

    pub fn same_grid(&self, other: &Shape) -> bool {
        self.height == other.height && self.width == other.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.classes, self.height, self.width)
    }
}

/// Plain dense `C x H x W` tensor with no value invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 || shape.classes == 0 {
            return Err(Error::InvalidTensor(format!("empty shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                data.len(),
            ));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor3 {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.classes {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Tensor3 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.shape.height + i) * self.shape.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        let k = self.index(c, i, j);
        self.data[k] = v;
    }

    /// Value at class `c` and flattened pixel `p`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f64 {
        self.data[c * self.shape.pixels() + p]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.shape.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Class column at flattened pixel `p`.
    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.shape.classes).map(|c| self.at(c, p)).collect()
    }

    pub fn channel_sums(&self) -> Vec<f64> {
        (0..self.shape.classes)
            .map(|c| self.channel(c).iter().sum())
            .collect()
    }

    /// Sum over classes at every flattened pixel.
    pub fn pixel_sums(&self) -> Vec<f64> {
        let n = self.shape.pixels();
        let mut sums = vec![0.0; n];
        for c in 0..self.shape.classes {
            for (s, v) in sums.iter_mut().zip(self.channel(c)) {
                *s += v;
            }
        }
        sums
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Raw per-class scores `f` fed to the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor(Tensor3);

impl FeatureTensor {
    pub fn new(tensor: Tensor3) -> Result<Self> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite {
                what: "feature tensor",
            });
        }
        Ok(FeatureTensor(tensor))
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor3::new(shape, data)?)
    }

    pub fn zeros(shape: Shape) -> Self {
        FeatureTensor(Tensor3::zeros(shape))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

/// Per-class spatial distributions: every channel sums to 1 over pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap(Tensor3);

impl DensityMap {
    pub fn new(tensor: Tensor3) -> Result<Self> {
        check_nonnegative(&tensor, "density map")?;
        for (c, s) in tensor.channel_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidTensor(format!(
                    "density channel {c} sums to {s}"
                )));
            }
        }
        Ok(DensityMap(tensor))
    }

    pub(crate) fn new_unchecked(tensor: Tensor3) -> Self {
        DensityMap(tensor)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Density map scaled per class by the palette; doubles as a transport plan
/// with class marginal `t` and total mass 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDensity {
    tensor: Tensor3,
    palette: Palette,
}

impl WeightedDensity {
    pub fn new(tensor: Tensor3, palette: Palette) -> Result<Self> {
        if tensor.shape().classes != palette.classes() {
            return Err(Error::shape(palette.classes(), tensor.shape().classes));
        }
        check_nonnegative(&tensor, "weighted density")?;
        for (c, s) in tensor.channel_sums().into_iter().enumerate() {
            if (s - palette[c]).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidTensor(format!(
                    "weighted channel {c} sums to {s}, budget {}",
                    palette[c]
                )));
            }
        }
        Ok(WeightedDensity { tensor, palette })
    }

    pub(crate) fn new_unchecked(tensor: Tensor3, palette: Palette) -> Self {
        WeightedDensity { tensor, palette }
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn as_slice(&self) -> &[f64] {
        self.tensor.as_slice()
    }
}

/// Per-pixel class distributions: every column sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask(Tensor3);

impl SoftMask {
    pub fn new(tensor: Tensor3) -> Result<Self> {
        check_nonnegative(&tensor, "soft mask")?;
        for (p, s) in tensor.pixel_sums().into_iter().enumerate() {
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidTensor(format!(
                    "soft mask column {p} sums to {s}"
                )));
            }
        }
        Ok(SoftMask(tensor))
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor3::new(shape, data)?)
    }

    /// Every pixel set to the uniform distribution `1/C`.
    pub fn uniform(shape: Shape) -> Self {
        let v = 1.0 / shape.classes as f64;
        SoftMask(Tensor3 {
            shape,
            data: vec![v; shape.len()],
        })
    }

    pub(crate) fn new_unchecked(tensor: Tensor3) -> Self {
        SoftMask(tensor)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

fn check_nonnegative(t: &Tensor3, what: &'static str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::NonFinite { what });
    }
    if t.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidTensor(format!("{what} has negative entries")));
    }
    Ok(())
}
