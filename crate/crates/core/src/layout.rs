//! Hard label maps and the class histograms computed from hard and soft layouts.

use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::tensor::{Shape, SoftMask};

/// `H x W` map of class labels in `[0, C)`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardLayout {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u32>,
}

impl HardLayout {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u32>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses { got: classes });
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidTensor(format!(
                "empty layout {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::shape(height * width, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as u64,
                classes,
            });
        }
        Ok(HardLayout {
            height,
            width,
            classes,
            labels,
        })
    }

    /// Layout with every pixel set to `label`.
    pub fn filled(height: usize, width: usize, classes: usize, label: u32) -> Result<Self> {
        Self::new(height, width, classes, vec![label; height * width])
    }

    pub(crate) fn new_unchecked(
        height: usize,
        width: usize,
        classes: usize,
        labels: Vec<u32>,
    ) -> Self {
        HardLayout {
            height,
            width,
            classes,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.width + j]
    }

    /// Shape of the matching `C x H x W` tensor.
    pub fn tensor_shape(&self) -> Shape {
        Shape::new(self.classes, self.height, self.width)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Set of pixels on an `H x W` grid, stored as a row-major membership mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    height: usize,
    width: usize,
    members: Vec<bool>,
}

impl PixelSet {
    pub fn empty(height: usize, width: usize) -> Self {
        PixelSet {
            height,
            width,
            members: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        PixelSet {
            height,
            width,
            members: vec![true; height * width],
        }
    }

    pub fn from_mask(height: usize, width: usize, members: Vec<bool>) -> Result<Self> {
        if members.len() != height * width {
            return Err(Error::shape(height * width, members.len()));
        }
        Ok(PixelSet {
            height,
            width,
            members,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        self.members[i * self.width + j] = true;
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.members[i * self.width + j]
    }

    pub fn contains_flat(&self, p: usize) -> bool {
        self.members[p]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened indices of the members, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(p, &m)| m.then_some(p))
    }
}

/// Fraction of pixels carrying each label.
pub fn hard_histogram(layout: &HardLayout) -> Palette {
    let n = layout.pixels() as f64;
    Palette::from_raw_unchecked(
        layout
            .class_counts()
            .into_iter()
            .map(|k| k as f64 / n)
            .collect(),
    )
}

/// Spatial average of each class channel of a soft mask.
pub fn soft_histogram(mask: &SoftMask) -> Vec<f64> {
    let t = mask.tensor();
    let n = t.shape().pixels() as f64;
    (0..t.shape().classes)
        .map(|c| t.channel(c).iter().sum::<f64>() / n)
        .collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (k, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = k;
            best_value = v;
        }
    }
    best
}

/// Per-pixel argmax of a soft mask, ties broken towards the lowest class.
pub fn argmax_labeling(mask: &SoftMask) -> HardLayout {
    let t = mask.tensor();
    let shape = t.shape();
    let labels = (0..shape.pixels())
        .map(|p| argmax((0..shape.classes).map(|c| t.at(c, p))) as u32)
        .collect();
    HardLayout::new_unchecked(shape.height, shape.width, shape.classes, labels)
}
