//! Semantically-assisted activation: per-class spatial softmax, palette
//! weighting, and per-pixel L1 normalization, plus the residual fusion of the
//! resulting mask back into a feature map.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::tensor::{DensityMap, FeatureTensor, SoftMask, Tensor3, WeightedDensity};

/// Floor applied to every normalization denominator.
pub const NORMALIZATION_FLOOR: f64 = 1e-12;

/// What to do when a normalization denominator falls below
/// [`NORMALIZATION_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMode {
    /// Divide by the floor instead.
    #[default]
    Lenient,
    /// Report the offending row, column or pixel as an error.
    Strict,
}

/// Softmax over the pixels of each class channel, with per-channel max
/// subtraction.
pub fn spatial_softmax(f: &FeatureTensor) -> DensityMap {
    let mut out = f.tensor().clone();
    for c in 0..out.shape().classes {
        softmax_in_place(out.channel_mut(c));
    }
    DensityMap::new_unchecked(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Scales channel `c` of the density map by `t[c]`, so that channel `c`
/// carries exactly the budget `t[c]`.
pub fn palette_weighting(rho: &DensityMap, t: &Palette) -> Result<WeightedDensity> {
    let shape = rho.shape();
    if shape.classes != t.classes() {
        return Err(Error::shape(
            format!("{} classes", t.classes()),
            format!("{} classes", shape.classes),
        ));
    }
    let mut out = rho.tensor().clone();
    for c in 0..shape.classes {
        let budget = t[c];
        for v in out.channel_mut(c) {
            *v *= budget;
        }
    }
    Ok(WeightedDensity::new_unchecked(out, t.clone()))
}

/// Per-pixel L1 normalization in lenient mode.
pub fn pixel_normalize(omega: &WeightedDensity) -> SoftMask {
    normalize_columns(omega.tensor(), NormalizeMode::Lenient)
        .map(SoftMask::new_unchecked)
        .expect("lenient normalization cannot fail")
}

/// Per-pixel L1 normalization; in strict mode a column whose total is below
/// the floor yields [`Error::AllZeroColumn`].
pub fn pixel_normalize_with(omega: &WeightedDensity, mode: NormalizeMode) -> Result<SoftMask> {
    normalize_columns(omega.tensor(), mode).map(SoftMask::new_unchecked)
}

pub(crate) fn normalize_columns(t: &Tensor3, mode: NormalizeMode) -> Result<Tensor3> {
    let shape = t.shape();
    let n = shape.pixels();
    let sums = t.pixel_sums();
    let mut denom = Vec::with_capacity(n);
    for (p, &s) in sums.iter().enumerate() {
        if s < NORMALIZATION_FLOOR {
            if mode == NormalizeMode::Strict {
                return Err(Error::AllZeroColumn { pixel: p });
            }
            denom.push(NORMALIZATION_FLOOR);
        } else {
            denom.push(s);
        }
    }
    let mut out = t.clone();
    for c in 0..shape.classes {
        for (v, d) in out.channel_mut(c).iter_mut().zip(&denom) {
            *v /= d;
        }
    }
    Ok(out)
}

/// All three stages of the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaOutput {
    pub density: DensityMap,
    pub weighted: WeightedDensity,
    pub mask: SoftMask,
}

pub fn saa(f: &FeatureTensor, t: &Palette) -> Result<SaaOutput> {
    saa_with(f, t, NormalizeMode::Lenient)
}

pub fn saa_with(f: &FeatureTensor, t: &Palette, mode: NormalizeMode) -> Result<SaaOutput> {
    let density = spatial_softmax(f);
    let weighted = palette_weighting(&density, t)?;
    let mask = pixel_normalize_with(&weighted, mode)?;
    Ok(SaaOutput {
        density,
        weighted,
        mask,
    })
}

/// Per-pixel linear map from `C` class channels to `F` feature channels,
/// stored row-major as an `F x C` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    features: usize,
    classes: usize,
    matrix: Vec<f64>,
}

impl FusionWeights {
    pub fn new(features: usize, classes: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != features * classes {
            return Err(Error::shape(
                format!("{features}x{classes} matrix"),
                format!("{} values", matrix.len()),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "fusion weights",
            });
        }
        Ok(FusionWeights {
            features,
            classes,
            matrix,
        })
    }

    pub fn zeros(features: usize, classes: usize) -> Self {
        FusionWeights {
            features,
            classes,
            matrix: vec![0.0; features * classes],
        }
    }

    pub fn identity(classes: usize) -> Self {
        let mut matrix = vec![0.0; classes * classes];
        for k in 0..classes {
            matrix[k * classes + k] = 1.0;
        }
        FusionWeights {
            features: classes,
            classes,
            matrix,
        }
    }

    /// Entries drawn i.i.d. from `Normal(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(
        features: usize,
        classes: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let matrix = (0..features * classes)
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(features, classes, matrix)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, feature: usize, class: usize) -> f64 {
        self.matrix[feature * self.classes + class]
    }
}

/// `out[:, i, j] = features[:, i, j] + W * mask[:, i, j]`.
pub fn residual_fusion(features: &Tensor3, mask: &SoftMask, w: &FusionWeights) -> Result<Tensor3> {
    let fs = features.shape();
    let ms = mask.shape();
    if !fs.same_grid(&ms) || fs.classes != w.features || ms.classes != w.classes {
        return Err(Error::shape(
            format!(
                "features {}x{}x{} with mask {}x{}x{}",
                w.features, ms.height, ms.width, w.classes, ms.height, ms.width
            ),
            format!("features {fs} with mask {ms}"),
        ));
    }
    let m = mask.tensor();
    let mut out = features.clone();
    for k in 0..fs.classes {
        let row = &w.matrix[k * w.classes..(k + 1) * w.classes];
        let dst = out.channel_mut(k);
        for (c, &weight) in row.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            for (d, &mv) in dst.iter_mut().zip(m.channel(c)) {
                *d += weight * mv;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::argmax_labeling;
    use crate::tensor::Shape;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_example() {
        let f = FeatureTensor::from_vec(Shape::new(1, 1, 2), vec![0.0, 3f64.ln()]).unwrap();
        let rho = spatial_softmax(&f);
        assert!(close(rho.as_slice()[0], 0.25, 1e-15));
        assert!(close(rho.as_slice()[1], 0.75, 1e-15));
    }

    #[test]
    fn softmax_zero_and_shift() {
        let shape = Shape::new(2, 3, 4);
        let rho = spatial_softmax(&FeatureTensor::zeros(shape));
        assert!(rho.as_slice().iter().all(|&v| close(v, 1.0 / 12.0, 1e-15)));

        let f = FeatureTensor::new(Tensor3::from_fn(shape, |c, i, j| {
            (c + 2 * i) as f64 - 0.3 * j as f64
        }))
        .unwrap();
        let g = FeatureTensor::new(Tensor3::from_fn(shape, |c, i, j| {
            (c + 2 * i) as f64 - 0.3 * j as f64 + if c == 0 { 50.0 } else { -7.5 }
        }))
        .unwrap();
        let (a, b) = (spatial_softmax(&f), spatial_softmax(&g));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn softmax_survives_large_scores() {
        let f = FeatureTensor::from_vec(Shape::new(1, 1, 3), vec![1000.0, 999.0, -1000.0]).unwrap();
        let rho = spatial_softmax(&f);
        assert!(rho.tensor().is_finite());
        assert!(close(rho.as_slice().iter().sum::<f64>(), 1.0, 1e-15));
    }

    #[test]
    fn weighting_example() {
        let rho = spatial_softmax(&FeatureTensor::zeros(Shape::new(2, 1, 2)));
        let t = Palette::new(vec![0.3, 0.7]).unwrap();
        let w = palette_weighting(&rho, &t).unwrap();
        let expect = [0.15, 0.15, 0.35, 0.35];
        for (a, b) in w.as_slice().iter().zip(expect) {
            assert!(close(*a, b, 1e-15));
        }
        let bad = Palette::uniform(3).unwrap();
        assert!(matches!(
            palette_weighting(&rho, &bad),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn weighting_one_hot_and_uniform() {
        let shape = Shape::new(3, 2, 2);
        let f = FeatureTensor::new(Tensor3::from_fn(shape, |c, i, j| {
            (c * 3 + i * 2 + j) as f64 * 0.1
        }))
        .unwrap();
        let rho = spatial_softmax(&f);
        let w = palette_weighting(&rho, &Palette::one_hot(3, 1).unwrap()).unwrap();
        assert!(w.tensor().channel(0).iter().all(|&v| v == 0.0));
        assert!(w.tensor().channel(2).iter().all(|&v| v == 0.0));
        let w = palette_weighting(&rho, &Palette::uniform(3).unwrap()).unwrap();
        for (a, b) in w.as_slice().iter().zip(rho.as_slice()) {
            assert!(close(*a, b / 3.0, 1e-15));
        }
    }

    #[test]
    fn normalize_example_column() {
        let t = Tensor3::new(Shape::new(2, 1, 1), vec![0.15, 0.35]).unwrap();
        let omega = WeightedDensity::new_unchecked(t, Palette::new(vec![0.5, 0.5]).unwrap());
        let m = pixel_normalize(&omega);
        assert!(close(m.as_slice()[0], 0.3, 1e-15));
        assert!(close(m.as_slice()[1], 0.7, 1e-15));
    }

    #[test]
    fn normalize_strict_flags_empty_column() {
        let t = Tensor3::new(Shape::new(2, 1, 2), vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let omega = WeightedDensity::new_unchecked(t, Palette::new(vec![0.0, 1.0]).unwrap());
        // pixel 0 carries 0 in both channels
        assert!(matches!(
            pixel_normalize_with(&omega, NormalizeMode::Strict),
            Err(Error::AllZeroColumn { pixel: 0 })
        ));
        let lenient = pixel_normalize(&omega);
        assert_eq!(lenient.as_slice(), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn saa_uniform_case() {
        let shape = Shape::new(2, 3, 5);
        let t = Palette::new(vec![0.2, 0.8]).unwrap();
        let out = saa(&FeatureTensor::zeros(shape), &t).unwrap();
        let m = out.mask.tensor();
        for p in 0..shape.pixels() {
            assert!(close(m.at(0, p), 0.2, 1e-15) && close(m.at(1, p), 0.8, 1e-15));
        }
        assert!(argmax_labeling(&out.mask).labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn saa_zero_target_absent() {
        let shape = Shape::new(2, 4, 4);
        let f = FeatureTensor::new(Tensor3::from_fn(shape, |c, i, j| {
            if c == 0 {
                5.0
            } else {
                (i * j) as f64 * 0.1
            }
        }))
        .unwrap();
        let out = saa(&f, &Palette::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(argmax_labeling(&out.mask).labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn fusion_cases() {
        let shape = Shape::new(3, 2, 2);
        let mask = SoftMask::new(Tensor3::from_fn(shape, |c, i, j| {
            if c == (i + j) % 3 {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap();
        let feats = Tensor3::from_fn(Shape::new(4, 2, 2), |c, i, j| (c * 7 + i * 3 + j) as f64);
        let out = residual_fusion(&feats, &mask, &FusionWeights::zeros(4, 3)).unwrap();
        assert_eq!(out, feats);

        let w = FusionWeights::new(4, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        let out = residual_fusion(&feats, &mask, &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let k = (i + j) % 3;
                for fch in 0..4 {
                    assert_eq!(out.get(fch, i, j), feats.get(fch, i, j) + w.get(fch, k));
                }
            }
        }

        let feats3 = Tensor3::from_fn(shape, |c, i, j| (c + i + j) as f64);
        let out = residual_fusion(&feats3, &mask, &FusionWeights::identity(3)).unwrap();
        for (o, (a, b)) in out
            .as_slice()
            .iter()
            .zip(feats3.as_slice().iter().zip(mask.as_slice()))
        {
            assert_eq!(*o, a + b);
        }
        assert!(residual_fusion(&feats, &mask, &FusionWeights::identity(3)).is_err());
    }
}
