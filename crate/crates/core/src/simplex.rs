//! Approximate projection onto the probability simplex by clipping to
//! `[0, 1]` and L1 normalization.

use crate::error::{Error, Result};
use crate::palette::Palette;

pub fn project_simplex(v: &[f64]) -> Result<Palette> {
    if v.len() < 2 {
        return Err(Error::TooFewClasses { got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "vector" });
    }
    let clipped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum <= 0.0 {
        return Err(Error::AllZeroAfterClip);
    }
    Ok(Palette::from_raw_unchecked(
        clipped.into_iter().map(|x| x / sum).collect(),
    ))
}
