//! Direct layout synthesis: momentum gradient descent on the feature tensor
//! under the conditional loss, plus region editing and a gradient self-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{argmax_labeling, hard_histogram, HardLayout};
use crate::losses::{cond_terms, cond_upstream, saa_backward, CondWeights};
use crate::metrics::kl_floored;
use crate::palette::Palette;
use crate::saa::{saa, SaaOutput};
use crate::tensor::{FeatureTensor, Shape, SoftMask, Tensor3};
use crate::transforms::{mark_crop, merge_edit, one_hot, AugmentedSoftMask, EditRegion};

/// Weight of the penalty holding the background channel at 1 outside an
/// edit region.
pub const PIN_WEIGHT: f64 = 10.0;

/// Tolerance on the background budget of an edit palette.
pub const BACKGROUND_BUDGET_TOLERANCE: f64 = 0.01;

/// Bound on relative gradient error accepted by [`gradcheck`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference step used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub seed: u64,
    pub init_std: f64,
    pub multiscale: bool,
    pub kl_stop: f64,
    /// Steps between trace records; the first and last step are always kept.
    pub checkpoint_every: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            height: 16,
            width: 16,
            steps: 2000,
            step_size: 0.5,
            momentum: 0.9,
            seed: 0,
            init_std: 1.0,
            multiscale: false,
            kl_stop: 0.01,
            checkpoint_every: 50,
        }
    }
}

impl SynthesisConfig {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        SynthesisConfig {
            height,
            width,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.height == 0 || self.width == 0 {
            return bad(format!("empty size {}x{}", self.height, self.width));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size {} must be positive", self.step_size));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std {} must be nonnegative", self.init_std));
        }
        if self.kl_stop.is_nan() || self.kl_stop < 0.0 {
            return bad(format!("kl_stop {} must be nonnegative", self.kl_stop));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub height: usize,
    pub width: usize,
    pub entropy: f64,
    pub spread: f64,
    pub cond: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisTrace {
    pub records: Vec<TraceRecord>,
    pub steps_run: usize,
    pub final_kl: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub layout: HardLayout,
    pub mask: SoftMask,
    pub trace: SynthesisTrace,
}

/// Adds the gradient of an extra penalty on the mask to `mask_grad` and
/// returns the penalty value.
type Penalty<'a> = &'a dyn Fn(&SaaOutput, &mut [f64]) -> f64;

struct Descent<'a> {
    t: &'a Palette,
    cfg: &'a SynthesisConfig,
    penalty: Option<Penalty<'a>>,
    records: Vec<TraceRecord>,
    step: usize,
}

struct Stage {
    out: SaaOutput,
    kl: f64,
    stopped: bool,
}

impl Descent<'_> {
    fn record(&mut self, out: &SaaOutput, kl: f64) {
        let terms = cond_terms(out);
        let shape = out.mask.shape();
        self.records.push(TraceRecord {
            step: self.step,
            height: shape.height,
            width: shape.width,
            entropy: terms.entropy.value,
            spread: terms.spread.value,
            cond: terms.total(),
            kl,
        });
    }

    /// Runs up to `steps` updates on `f`, stopping early once the realized
    /// KL reaches the threshold.
    fn run(&mut self, f: &mut Tensor3, steps: usize) -> Result<Stage> {
        let mut velocity = vec![0.0; f.shape().len()];
        let mut taken = 0;
        loop {
            let out = saa(&FeatureTensor::new(f.clone())?, self.t)?;
            let kl = kl_floored(
                self.t.as_slice(),
                hard_histogram(&argmax_labeling(&out.mask)).as_slice(),
            );
            let stopped = kl <= self.cfg.kl_stop;
            let done = stopped || taken == steps;
            if done || self.step.is_multiple_of(self.cfg.checkpoint_every) {
                self.record(&out, kl);
            }
            if done {
                return Ok(Stage { out, kl, stopped });
            }
            let (mut mask_grad, total_grad) = cond_upstream(&out, CondWeights::default());
            if let Some(penalty) = self.penalty {
                penalty(&out, &mut mask_grad);
            }
            let g = saa_backward(&out, &mask_grad, &total_grad);
            if !g.is_finite() {
                return Err(Error::NonFinite { what: "gradient" });
            }
            for ((x, v), &gv) in f
                .as_mut_slice()
                .iter_mut()
                .zip(&mut velocity)
                .zip(g.as_slice())
            {
                *v = self.cfg.momentum * *v + gv;
                *x -= self.cfg.step_size * *v;
            }
            taken += 1;
            self.step += 1;
        }
    }
}

fn gaussian_init(shape: Shape, std: f64, rng: &mut ChaCha8Rng) -> Tensor3 {
    let data = (0..shape.len())
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor3::new(shape, data).expect("length matches shape")
}

/// Bilinear resize of every channel, sampling at pixel centres with
/// edge clamping.
pub fn bilinear_resize(src: &Tensor3, height: usize, width: usize) -> Tensor3 {
    let s = src.shape();
    let coord = |dst: usize, dst_len: usize, src_len: usize| {
        let x = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, x - lo as f64)
    };
    Tensor3::from_fn(Shape::new(s.classes, height, width), |c, i, j| {
        let (i0, i1, di) = coord(i, height, s.height);
        let (j0, j1, dj) = coord(j, width, s.width);
        let top = src.get(c, i0, j0) * (1.0 - dj) + src.get(c, i0, j1) * dj;
        let bottom = src.get(c, i1, j0) * (1.0 - dj) + src.get(c, i1, j1) * dj;
        top * (1.0 - di) + bottom * di
    })
}

fn optimize(
    t: &Palette,
    cfg: &SynthesisConfig,
    mut f: Tensor3,
    penalty: Option<Penalty<'_>>,
) -> Result<(SaaOutput, SynthesisTrace)> {
    let mut descent = Descent {
        t,
        cfg,
        penalty,
        records: Vec::new(),
        step: 0,
    };
    let coarse = (cfg.height.div_ceil(2), cfg.width.div_ceil(2));
    let stage = if cfg.multiscale
        && penalty.is_none()
        && cfg.steps >= 2
        && coarse != (cfg.height, cfg.width)
    {
        let mut small = bilinear_resize(&f, coarse.0, coarse.1);
        descent.run(&mut small, cfg.steps / 2)?;
        f = bilinear_resize(&small, cfg.height, cfg.width);
        descent.run(&mut f, cfg.steps - descent.step)?
    } else {
        descent.run(&mut f, cfg.steps)?
    };
    let trace = SynthesisTrace {
        records: descent.records,
        steps_run: descent.step,
        final_kl: stage.kl,
        converged: stage.stopped,
    };
    Ok((stage.out, trace))
}

/// Optimizes a feature tensor initialized from `cfg.seed` until its hard
/// layout matches `t`, and returns the argmax layout of the final mask.
pub fn synthesize(t: &Palette, cfg: &SynthesisConfig) -> Result<Synthesis> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = Shape::new(t.classes(), cfg.height, cfg.width);
    let f = gaussian_init(shape, cfg.init_std, &mut rng);
    let (out, trace) = optimize(t, cfg, f, None)?;
    Ok(Synthesis {
        layout: argmax_labeling(&out.mask),
        mask: out.mask,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub layout: HardLayout,
    /// Merged `C`-class mask.
    pub mask: SoftMask,
    /// Generated mask over `C` classes plus background, with the outside of
    /// the region clamped to background.
    pub generated: AugmentedSoftMask,
    pub trace: SynthesisTrace,
}

/// Re-synthesizes `region` of `input` so the result follows `t`, a palette
/// over the input classes plus a trailing background entry holding the
/// fraction of pixels outside the region. Pixels outside the region keep
/// their labels.
pub fn synthesize_edit(
    input: &HardLayout,
    region: &EditRegion,
    t: &Palette,
    cfg: &SynthesisConfig,
) -> Result<EditOutcome> {
    let (h, w, c) = (input.height(), input.width(), input.classes());
    let cfg = SynthesisConfig {
        height: h,
        width: w,
        ..cfg.clone()
    };
    cfg.validate()?;
    region.check_bounds(h, w)?;
    if t.classes() != c + 1 {
        return Err(Error::shape(format!("{} budgets", c + 1), t.classes()));
    }
    let n = input.pixels();
    let expected = (n - region.area()) as f64 / n as f64;
    if (t[c] - expected).abs() > BACKGROUND_BUDGET_TOLERANCE {
        return Err(Error::BadBackgroundBudget {
            expected,
            got: t[c],
        });
    }
    let marked = mark_crop(&one_hot(input), region)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = gaussian_init(Shape::new(c + 1, h, w), cfg.init_std, &mut rng);
    let outside: Vec<usize> = (0..n).filter(|&p| !region.contains(p / w, p % w)).collect();
    let bg_offset = c * n;
    let pin = |out: &SaaOutput, mask_grad: &mut [f64]| {
        let bg = out.mask.tensor().channel(c);
        let scale = PIN_WEIGHT / n as f64;
        let mut value = 0.0;
        for &p in &outside {
            let gap = 1.0 - bg[p];
            value += scale * gap * gap;
            mask_grad[bg_offset + p] -= 2.0 * scale * gap;
        }
        value
    };
    let (out, trace) = optimize(t, &cfg, f, Some(&pin))?;

    let mut generated = out.mask.into_tensor();
    for &p in &outside {
        for k in 0..=c {
            generated.as_mut_slice()[k * n + p] = if k == c { 1.0 } else { 0.0 };
        }
    }
    let generated = AugmentedSoftMask::new(SoftMask::new_unchecked(generated))?;
    let mask = merge_edit(&generated, &marked)?;
    let mut layout = argmax_labeling(&mask);
    debug_assert!(outside
        .iter()
        .all(|&p| layout.labels()[p] == input.labels()[p]));
    if outside
        .iter()
        .any(|&p| layout.labels()[p] != input.labels()[p])
    {
        let labels = (0..n)
            .map(|p| {
                if region.contains(p / w, p % w) {
                    layout.labels()[p]
                } else {
                    input.labels()[p]
                }
            })
            .collect();
        layout = HardLayout::new(h, w, c, labels)?;
    }
    Ok(EditOutcome {
        layout,
        mask,
        generated,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub step: f64,
    /// Largest entry difference relative to the larger gradient's max norm.
    pub max_rel_err: f64,
    /// Largest difference relative to the entry's own magnitude.
    pub max_entry_rel_err: f64,
    pub max_abs_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random palette with every entry positive: normalized exponential draws.
pub fn random_palette<R: Rng + ?Sized>(classes: usize, rng: &mut R) -> Palette {
    let draws: Vec<f64> = (0..classes)
        .map(|_| Distribution::<f64>::sample(&Exp1, rng).max(1e-3))
        .collect();
    let z: f64 = draws.iter().sum();
    Palette::from_raw_unchecked(draws.into_iter().map(|d| d / z).collect())
}

/// Relative errors between two gradients:
/// `(max |a-b| / max(|a|_inf, |b|_inf, 1e-8), max_i |a_i-b_i| / max(|a_i|, |b_i|, 1e-8), max |a-b|)`.
pub fn gradient_errors(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let inf = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = inf(a).max(inf(b)).max(1e-8);
    let mut abs = 0.0f64;
    let mut entry = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = (x - y).abs();
        abs = abs.max(d);
        entry = entry.max(d / x.abs().max(y.abs()).max(1e-8));
    }
    (abs / scale, entry, abs)
}

/// Central-difference gradient of the conditional loss.
pub fn numerical_cond_grad(f: &FeatureTensor, t: &Palette, h: f64) -> Result<Vec<f64>> {
    let base = f.tensor().clone();
    let loss = |x: Tensor3| -> Result<f64> {
        Ok(crate::losses::cond_loss_terms(&FeatureTensor::new(x)?, t)?.total())
    };
    (0..base.shape().len())
        .map(|k| {
            let mut plus = base.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = base.clone();
            minus.as_mut_slice()[k] -= h;
            Ok((loss(plus)? - loss(minus)?) / (2.0 * h))
        })
        .collect()
}

/// Compares the analytic conditional-loss gradient against central
/// differences at a random point drawn from `seed`.
pub fn gradcheck(
    seed: u64,
    classes: usize,
    height: usize,
    width: usize,
) -> Result<GradcheckReport> {
    if classes < 2 {
        return Err(Error::TooFewClasses { got: classes });
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidConfig(format!("empty size {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(classes, height, width);
    let f = FeatureTensor::new(gaussian_init(shape, 1.0, &mut rng))?;
    let t = random_palette(classes, &mut rng);
    let analytic = crate::losses::cond_loss_grad(&f, &t)?;
    let numeric = numerical_cond_grad(&f, &t, GRADCHECK_STEP)?;
    let (max_rel_err, max_entry_rel_err, max_abs_err) =
        gradient_errors(analytic.as_slice(), &numeric);
    Ok(GradcheckReport {
        seed,
        classes,
        height,
        width,
        step: GRADCHECK_STEP,
        max_rel_err,
        max_entry_rel_err,
        max_abs_err,
        tolerance: GRADCHECK_TOLERANCE,
        passed: max_rel_err < GRADCHECK_TOLERANCE,
    })
}
