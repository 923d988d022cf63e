//! Conversions between hard and soft layouts, and the crop/merge steps of
//! partial editing.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layout::{argmax, HardLayout, PixelSet};
use crate::tensor::{Shape, SoftMask, Tensor3};

/// Default blend weight of the blurred masks in [`soften_ground_truth`].
pub const DEFAULT_SOFTEN_ALPHA: f64 = 0.4;

/// Blur width used for a layout of the given height: `max(1, H / 32)`.
pub fn default_soften_sigma(height: usize) -> f64 {
    (height as f64 / 32.0).max(1.0)
}

/// Exact one-hot encoding of a layout.
pub fn one_hot(layout: &HardLayout) -> SoftMask {
    let shape = layout.tensor_shape();
    let n = shape.pixels();
    let mut t = Tensor3::zeros(shape);
    let data = t.as_mut_slice();
    for (p, &l) in layout.labels().iter().enumerate() {
        data[l as usize * n + p] = 1.0;
    }
    SoftMask::new_unchecked(t)
}

/// Normalized Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Maps an out-of-range index back into `[0, n)` by mirroring about the
/// borders (`d c b a | a b c d | d c b a`).
fn reflect(idx: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = idx.rem_euclid(period) as usize;
    if m >= n {
        period as usize - 1 - m
    } else {
        m
    }
}

fn convolve_line(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let radius = (kernel.len() / 2) as isize;
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &w) in kernel.iter().enumerate() {
            acc += w * src[reflect(i as isize + k as isize - radius, n)];
        }
        *out = acc;
    }
}

/// Separable Gaussian blur of one `H x W` channel with reflect padding.
pub fn gaussian_blur(channel: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let mut rows = vec![0.0; channel.len()];
    for (src, dst) in channel.chunks(width).zip(rows.chunks_mut(width)) {
        convolve_line(src, &kernel, dst);
    }
    let mut out = vec![0.0; channel.len()];
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for j in 0..width {
        for i in 0..height {
            col[i] = rows[i * width + j];
        }
        convolve_line(&col, &kernel, &mut col_out);
        for i in 0..height {
            out[i * width + j] = col_out[i];
        }
    }
    out
}

/// `alpha * blur(one_hot) + (1 - alpha) * one_hot`, renormalized per pixel.
/// With `alpha < 0.5` the true label keeps more than half the mass at every
/// pixel, so the argmax is unchanged.
pub fn soften_ground_truth(layout: &HardLayout, sigma: f64, alpha: f64) -> Result<SoftMask> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSigma(sigma));
    }
    let hard = one_hot(layout);
    if alpha == 0.0 {
        return Ok(hard);
    }
    let shape = hard.shape();
    let mut t = hard.into_tensor();
    for c in 0..shape.classes {
        let blurred = gaussian_blur(t.channel(c), shape.height, shape.width, sigma);
        for (v, b) in t.channel_mut(c).iter_mut().zip(blurred) {
            *v = alpha * b + (1.0 - alpha) * *v;
        }
    }
    let sums = t.pixel_sums();
    for c in 0..shape.classes {
        for (v, s) in t.channel_mut(c).iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    Ok(SoftMask::new_unchecked(t))
}

/// One categorical draw per pixel by the Gumbel-max construction. Pixels are
/// visited row-major and every class consumes one uniform draw, so the
/// stream position does not depend on the mask values.
pub fn gumbel_sample<R: Rng + ?Sized>(m: &SoftMask, rng: &mut R) -> HardLayout {
    let t = m.tensor();
    let shape = t.shape();
    let labels = (0..shape.pixels())
        .map(|p| {
            let scores: Vec<f64> = (0..shape.classes)
                .map(|c| {
                    let u: f64 = rng.random();
                    let g = -(-u.max(f64::MIN_POSITIVE).ln()).ln();
                    let prob = t.at(c, p);
                    if prob > 0.0 {
                        prob.ln() + g
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            argmax(scores) as u32
        })
        .collect();
    HardLayout::new_unchecked(shape.height, shape.width, shape.classes, labels)
}

/// Axis-aligned rectangle of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for EditRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.top, self.left, self.height, self.width
        )
    }
}

impl EditRegion {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        EditRegion {
            top,
            left,
            height,
            width,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.top && i < self.top + self.height && j >= self.left && j < self.left + self.width
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if self.area() == 0 || self.top + self.height > height || self.left + self.width > width {
            return Err(Error::RegionOutOfBounds {
                region: self.to_string(),
                height,
                width,
            });
        }
        Ok(())
    }

    pub fn pixel_set(&self, height: usize, width: usize) -> PixelSet {
        let mut set = PixelSet::empty(height, width);
        for i in self.top..(self.top + self.height).min(height) {
            for j in self.left..(self.left + self.width).min(width) {
                set.insert(i, j);
            }
        }
        set
    }
}

/// Sets every class column inside `region` to the uniform distribution.
pub fn mark_crop(mask: &SoftMask, region: &EditRegion) -> Result<SoftMask> {
    let shape = mask.shape();
    region.check_bounds(shape.height, shape.width)?;
    let uniform = 1.0 / shape.classes as f64;
    let mut t = mask.tensor().clone();
    for c in 0..shape.classes {
        for i in region.top..region.top + region.height {
            for j in region.left..region.left + region.width {
                t.set(c, i, j, uniform);
            }
        }
    }
    Ok(SoftMask::new_unchecked(t))
}

/// Soft mask over `C` classes plus a trailing background channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSoftMask(SoftMask);

impl AugmentedSoftMask {
    /// Wraps a mask whose last channel is the background class.
    pub fn new(mask: SoftMask) -> Result<Self> {
        if mask.shape().classes < 3 {
            return Err(Error::TooFewClasses {
                got: mask.shape().classes.saturating_sub(1),
            });
        }
        Ok(AugmentedSoftMask(mask))
    }

    pub fn background_index(&self) -> usize {
        self.0.shape().classes - 1
    }

    /// Number of foreground classes.
    pub fn classes(&self) -> usize {
        self.background_index()
    }

    pub fn mask(&self) -> &SoftMask {
        &self.0
    }

    pub fn background(&self) -> &[f64] {
        self.0.tensor().channel(self.background_index())
    }
}

/// `out[c] = generated[c] + generated[bg] * input[c]`.
pub fn merge_edit(generated: &AugmentedSoftMask, input: &SoftMask) -> Result<SoftMask> {
    let gs = generated.mask().shape();
    let is = input.shape();
    if !gs.same_grid(&is) || gs.classes != is.classes + 1 {
        return Err(Error::shape(
            Shape::new(is.classes + 1, is.height, is.width),
            gs,
        ));
    }
    let g = generated.mask().tensor();
    let bg = generated.background();
    let mut out = Tensor3::zeros(is);
    for c in 0..is.classes {
        for (((o, &gv), &b), &iv) in out
            .channel_mut(c)
            .iter_mut()
            .zip(g.channel(c))
            .zip(bg)
            .zip(input.tensor().channel(c))
        {
            *o = gv + b * iv;
        }
    }
    Ok(SoftMask::new_unchecked(out))
}

/// Pixels whose dominant augmented class is not the background.
pub fn edited_pixel_set(generated: &AugmentedSoftMask) -> PixelSet {
    let shape = generated.mask().shape();
    let t = generated.mask().tensor();
    let bg = generated.background_index();
    let members = (0..shape.pixels())
        .map(|p| argmax((0..shape.classes).map(|c| t.at(c, p))) != bg)
        .collect();
    PixelSet::from_mask(shape.height, shape.width, members).expect("sizes agree")
}
