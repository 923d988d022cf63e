//! Conditional losses on the activation outputs and their exact gradients
//! with respect to the raw scores.
//!
//! Gradients are propagated by hand through the three activation stages:
//!
//! * per-pixel normalization `m = w / S` with `S = sum_c w`:
//!   `dL/dw_k = (dL/dm_k - sum_c m_c dL/dm_c) / S + dL/dS`
//! * palette weighting `w_c = t_c * rho_c`: `dL/drho_c = t_c * dL/dw_c`
//! * channel softmax: `dL/df = rho * (dL/drho - sum_p rho_p dL/drho_p)`

use crate::error::{Error, Result};
use crate::layout::{soft_histogram, PixelSet};
use crate::palette::Palette;
use crate::saa::{saa, SaaOutput, NORMALIZATION_FLOOR};
use crate::tensor::{FeatureTensor, SoftMask, Tensor3, WeightedDensity};

/// Floor applied to the soft histogram inside the matching loss.
pub const HISTOGRAM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Per-pixel terms, row-major; `value` is their mean when present.
    pub per_pixel: Option<Vec<f64>>,
}

impl LossValue {
    pub fn scalar(value: f64) -> Self {
        LossValue {
            value,
            per_pixel: None,
        }
    }

    fn from_pixels(per_pixel: Vec<f64>) -> Self {
        let value = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
        LossValue {
            value,
            per_pixel: Some(per_pixel),
        }
    }
}

/// Gradient with the shape of the feature tensor it was taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Tensor3);

impl Gradient {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }
}

/// Relative weights of the two conditional terms. Both default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondWeights {
    pub entropy: f64,
    pub spread: f64,
}

impl Default for CondWeights {
    fn default() -> Self {
        CondWeights {
            entropy: 1.0,
            spread: 1.0,
        }
    }
}

/// Both conditional terms of one activation.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTerms {
    pub entropy: LossValue,
    pub spread: LossValue,
}

impl CondTerms {
    pub fn total(&self) -> f64 {
        self.weighted(CondWeights::default())
    }

    pub fn weighted(&self, w: CondWeights) -> f64 {
        w.entropy * self.entropy.value + w.spread * self.spread.value
    }
}

/// `x ln x` with `0 ln 0 = 0`.
fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Mean per-pixel Shannon entropy of the mask.
pub fn entropy_loss(m: &SoftMask) -> LossValue {
    let t = m.tensor();
    let shape = t.shape();
    let mut e = vec![0.0; shape.pixels()];
    for c in 0..shape.classes {
        for (acc, &v) in e.iter_mut().zip(t.channel(c)) {
            *acc -= xlnx(v);
        }
    }
    LossValue::from_pixels(e)
}

/// Mean of `(1 - H W sum_c w[c, i, j])^2`.
pub fn spread_loss(omega: &WeightedDensity) -> LossValue {
    let t = omega.tensor();
    let n = t.shape().pixels() as f64;
    let s = t
        .pixel_sums()
        .into_iter()
        .map(|total| {
            let d = 1.0 - n * total;
            d * d
        })
        .collect();
    LossValue::from_pixels(s)
}

pub fn cond_terms(out: &SaaOutput) -> CondTerms {
    CondTerms {
        entropy: entropy_loss(&out.mask),
        spread: spread_loss(&out.weighted),
    }
}

/// Entropy plus spread loss of the activation of `f` under `t`.
pub fn cond_loss(f: &FeatureTensor, t: &Palette) -> Result<LossValue> {
    let terms = cond_loss_terms(f, t)?;
    let e = terms.entropy.per_pixel.as_deref().unwrap_or_default();
    let s = terms.spread.per_pixel.as_deref().unwrap_or_default();
    let mut combined = LossValue::from_pixels(e.iter().zip(s).map(|(a, b)| a + b).collect());
    combined.value = terms.total();
    Ok(combined)
}

pub fn cond_loss_terms(f: &FeatureTensor, t: &Palette) -> Result<CondTerms> {
    Ok(cond_terms(&saa(f, t)?))
}

/// Exact gradient of [`cond_loss`] with respect to `f`.
pub fn cond_loss_grad(f: &FeatureTensor, t: &Palette) -> Result<Gradient> {
    cond_loss_and_grad(f, t, CondWeights::default()).map(|(_, g)| g)
}

/// Weighted conditional loss terms and the gradient of the weighted total.
pub fn cond_loss_and_grad(
    f: &FeatureTensor,
    t: &Palette,
    weights: CondWeights,
) -> Result<(CondTerms, Gradient)> {
    let out = saa(f, t)?;
    let terms = cond_terms(&out);
    let (mask_grad, total_grad) = cond_upstream(&out, weights);
    let g = saa_backward(&out, &mask_grad, &total_grad);
    if !g.is_finite() {
        return Err(Error::NonFinite { what: "gradient" });
    }
    Ok((terms, Gradient(g)))
}

/// Upstream gradients of the weighted conditional loss: with respect to the
/// mask entries and with respect to the per-pixel totals of the weighted
/// density.
pub(crate) fn cond_upstream(out: &SaaOutput, weights: CondWeights) -> (Vec<f64>, Vec<f64>) {
    let m = out.mask.as_slice();
    let n = out.mask.shape().pixels() as f64;
    let scale = weights.entropy / n;
    let mask_grad = m
        .iter()
        .map(|&v| {
            if v > 0.0 {
                -scale * (v.ln() + 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let total_grad = out
        .weighted
        .tensor()
        .pixel_sums()
        .into_iter()
        .map(|s| -2.0 * weights.spread * (1.0 - n * s))
        .collect();
    (mask_grad, total_grad)
}

/// Back-propagates `dL/dm` (full tensor) and `dL/dS` (per pixel) through the
/// activation to `dL/df`.
pub(crate) fn saa_backward(out: &SaaOutput, mask_grad: &[f64], total_grad: &[f64]) -> Tensor3 {
    let shape = out.mask.shape();
    let n = shape.pixels();
    let m = out.mask.tensor();
    let omega = out.weighted.tensor();
    let rho = out.density.tensor();
    let t = out.weighted.palette();

    let sums = omega.pixel_sums();
    // sum_c m_c dL/dm_c per pixel
    let mut dot = vec![0.0; n];
    for c in 0..shape.classes {
        let mg = &mask_grad[c * n..(c + 1) * n];
        for ((d, &g), &mv) in dot.iter_mut().zip(mg).zip(m.channel(c)) {
            *d += g * mv;
        }
    }

    let mut grad = Tensor3::zeros(shape);
    for c in 0..shape.classes {
        let budget = t[c];
        let mg = &mask_grad[c * n..(c + 1) * n];
        let rho_c = rho.channel(c);
        let g_rho: Vec<f64> = (0..n)
            .map(|p| {
                let g_omega = if sums[p] < NORMALIZATION_FLOOR {
                    mg[p] / NORMALIZATION_FLOOR + total_grad[p]
                } else {
                    (mg[p] - dot[p]) / sums[p] + total_grad[p]
                };
                budget * g_omega
            })
            .collect();
        let mean: f64 = rho_c.iter().zip(&g_rho).map(|(r, g)| r * g).sum();
        for ((dst, &r), &g) in grad.channel_mut(c).iter_mut().zip(rho_c).zip(&g_rho) {
            *dst = r * (g - mean);
        }
    }
    grad
}

/// `KL(t || soft histogram of m)` with the histogram floored at
/// [`HISTOGRAM_FLOOR`] and `0 ln(0/x) = 0`.
pub fn matching_loss(m: &SoftMask, t: &Palette) -> Result<LossValue> {
    if m.shape().classes != t.classes() {
        return Err(Error::shape(t.classes(), m.shape().classes));
    }
    let phi = soft_histogram(m);
    let value = t
        .iter()
        .zip(&phi)
        .map(|(&tc, &pc)| {
            if tc > 0.0 {
                tc * (tc / pc.max(HISTOGRAM_FLOOR)).ln()
            } else {
                0.0
            }
        })
        .sum();
    Ok(LossValue::scalar(value))
}

/// Mean inner product between the generated distribution `m` and the input
/// distribution `l` over the edited pixels.
pub fn novelty_loss(m: &SoftMask, l: &SoftMask, edited: &PixelSet) -> Result<LossValue> {
    let ms = m.shape();
    if ms != l.shape() {
        return Err(Error::shape(ms, l.shape()));
    }
    if edited.height() != ms.height || edited.width() != ms.width {
        return Err(Error::shape(
            format!("{}x{} pixel set", ms.height, ms.width),
            format!("{}x{}", edited.height(), edited.width()),
        ));
    }
    if edited.is_empty() {
        return Err(Error::EmptyEditSet);
    }
    let (mt, lt) = (m.tensor(), l.tensor());
    let per_pixel: Vec<f64> = edited
        .indices()
        .map(|p| (0..ms.classes).map(|c| lt.at(c, p) * mt.at(c, p)).sum())
        .collect();
    Ok(LossValue::from_pixels(per_pixel))
}

/// Sum of the conditional loss over every level of a pyramid that shares
/// one palette.
pub fn multiscale_cond_loss(pyramid: &[(FeatureTensor, Palette)]) -> Result<LossValue> {
    let (_, first) = pyramid.first().ok_or(Error::EmptyPyramid)?;
    let mut total = 0.0;
    for (f, t) in pyramid {
        if t != first {
            return Err(Error::PyramidPaletteMismatch);
        }
        total += cond_loss(f, t)?.value;
    }
    Ok(LossValue::scalar(total))
}
