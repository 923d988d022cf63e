//! Palette-conditioned semantic layouts.
//!
//! The crate turns raw per-class score maps into soft layouts whose class
//! proportions follow a target palette, scores them with conditional losses,
//! fits and samples palettes from real layouts, edits layouts in place, and
//! evaluates populations of layouts.

pub mod error;
pub mod gmm;
pub mod io;
pub mod layout;
pub mod losses;
pub mod metrics;
pub mod palette;
pub mod render;
pub mod saa;
pub mod simplex;
pub mod sinkhorn;
pub mod synth;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use layout::{argmax_labeling, hard_histogram, soft_histogram, HardLayout, PixelSet};
pub use metrics::{frechet_distance, population_stats, proportion_kl, PopulationStats};
pub use palette::{validate_palette, Palette};
pub use saa::{saa, SaaOutput};
pub use synth::{gradcheck, synthesize, synthesize_edit, SynthesisConfig, SynthesisTrace};
pub use tensor::{DensityMap, FeatureTensor, Shape, SoftMask, Tensor3, WeightedDensity};
pub use transforms::{AugmentedSoftMask, EditRegion};
