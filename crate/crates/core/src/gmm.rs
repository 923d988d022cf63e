//! Gaussian mixture over palettes: EM fitting with full covariances,
//! component-count selection by AIC, and sampling followed by simplex
//! projection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::palette::Palette;
use crate::simplex::project_simplex;

/// Added to every covariance diagonal at each M-step.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-6;
/// A component whose total responsibility drops below this is degenerate.
pub const MIN_COMPONENT_MASS: f64 = 1e-12;
/// Attempts before [`sample_palette`] gives up on all-zero draws.
pub const MAX_SAMPLE_ATTEMPTS: usize = 16;

const MODEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `C x C`.
    pub covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmDocument {
    dimension: usize,
    components: Vec<GmmComponent>,
}

/// Validated mixture. Each component caches a symmetric square-root factor
/// of its covariance for sampling.
#[derive(Debug, Clone)]
pub struct GmmModel {
    dimension: usize,
    components: Vec<GmmComponent>,
    factors: Vec<DMatrix<f64>>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension && self.components == other.components
    }
}

impl GmmModel {
    pub fn new(dimension: usize, components: Vec<GmmComponent>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidModel("no components".into()));
        }
        let mut weight_sum = 0.0;
        let mut factors = Vec::with_capacity(components.len());
        for (k, comp) in components.iter().enumerate() {
            if !(comp.weight > 0.0 && comp.weight <= 1.0) {
                return Err(Error::InvalidModel(format!(
                    "component {k} weight {} outside (0, 1]",
                    comp.weight
                )));
            }
            weight_sum += comp.weight;
            if comp.mean.len() != dimension || comp.covariance.len() != dimension * dimension {
                return Err(Error::InvalidModel(format!(
                    "component {k} does not have dimension {dimension}"
                )));
            }
            if comp
                .mean
                .iter()
                .chain(&comp.covariance)
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidModel(format!("component {k} is not finite")));
            }
            let cov = DMatrix::from_row_slice(dimension, dimension, &comp.covariance);
            for i in 0..dimension {
                for j in 0..i {
                    if (cov[(i, j)] - cov[(j, i)]).abs() > MODEL_TOLERANCE {
                        return Err(Error::InvalidModel(format!(
                            "component {k} covariance is not symmetric"
                        )));
                    }
                }
            }
            let sym = (&cov + cov.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            if eig.eigenvalues.iter().any(|&l| l < -MODEL_TOLERANCE) {
                return Err(Error::InvalidModel(format!(
                    "component {k} covariance is not positive semidefinite"
                )));
            }
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            factors.push(&eig.eigenvectors * DMatrix::from_diagonal(&roots));
        }
        if (weight_sum - 1.0).abs() > MODEL_TOLERANCE {
            return Err(Error::InvalidModel(format!("weights sum to {weight_sum}")));
        }
        Ok(GmmModel {
            dimension,
            components,
            factors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn to_json(&self) -> String {
        let doc = GmmDocument {
            dimension: self.dimension,
            components: self.components.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("finite floats serialize")
    }

    /// Parses and re-validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GmmDocument = serde_json::from_str(text)?;
        GmmModel::new(doc.dimension, doc.components)
    }

    /// Total log-likelihood of `samples` under the mixture.
    pub fn log_likelihood<P: AsRef<[f64]>>(&self, samples: &[P]) -> Result<f64> {
        let gaussians = self
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| Gaussian::new(k, &c.mean, &c.covariance, self.dimension))
            .collect::<Result<Vec<_>>>()?;
        let log_weights: Vec<f64> = self.components.iter().map(|c| c.weight.ln()).collect();
        let mut total = 0.0;
        let mut scratch = vec![0.0; self.components.len()];
        for s in samples {
            let x = s.as_ref();
            if x.len() != self.dimension {
                return Err(Error::DimensionMismatch(self.dimension, x.len()));
            }
            for (k, g) in gaussians.iter().enumerate() {
                scratch[k] = log_weights[k] + g.log_pdf(x);
            }
            total += log_sum_exp(&scratch);
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Regularized log-likelihood after the initial assignment and after
    /// each EM iteration; non-decreasing.
    pub objective: Vec<f64>,
    /// Plain log-likelihood of the returned model.
    pub log_likelihood: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Number of free parameters of a full-covariance mixture.
pub fn parameter_count(components: usize, dimension: usize) -> usize {
    components * (dimension + dimension * (dimension + 1) / 2) + components - 1
}

pub fn aic(log_likelihood: f64, components: usize, dimension: usize) -> f64 {
    2.0 * parameter_count(components, dimension) as f64 - 2.0 * log_likelihood
}

struct Gaussian {
    mean: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
    /// `-(eps / 2) tr(S^-1)`, the per-sample share of the covariance
    /// regularization term.
    penalty: f64,
}

impl Gaussian {
    fn new(k: usize, mean: &[f64], cov: &[f64], d: usize) -> Result<Self> {
        let cov = DMatrix::from_row_slice(d, d, cov);
        let chol = cov.cholesky().ok_or(Error::DegenerateComponent {
            component: k,
            mass: f64::NAN,
        })?;
        let log_det: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let penalty = -0.5 * COVARIANCE_REGULARIZATION * chol.inverse().trace();
        Ok(Gaussian {
            mean: DVector::from_column_slice(mean),
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            penalty,
        })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor is invertible");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by nearest-center assignment. Returns one-hot
/// responsibilities, sample-major.
fn kmeanspp_assign(samples: &[&[f64]], m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = samples.len();
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|x| squared_distance(x, samples[centers[0]]))
        .collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateComponent {
                component: centers.len(),
                mass: 0.0,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if acc > target && w > 0.0 {
                pick = i;
                break;
            }
        }
        // the fallback must still be a point not already chosen
        if d2[pick] == 0.0 {
            pick = d2
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("positive total implies a positive entry");
        }
        centers.push(pick);
        for (i, x) in samples.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(x, samples[pick]));
        }
    }
    let mut resp = vec![0.0; n * m];
    for (i, x) in samples.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &c) in centers.iter().enumerate() {
            let d = squared_distance(x, samples[c]);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        resp[i * m + best] = 1.0;
    }
    Ok(resp)
}

fn m_step(samples: &[&[f64]], resp: &[f64], m: usize, d: usize) -> Result<Vec<GmmComponent>> {
    let n = samples.len();
    let mut comps = Vec::with_capacity(m);
    for k in 0..m {
        let mass: f64 = (0..n).map(|i| resp[i * m + k]).sum();
        if mass < MIN_COMPONENT_MASS {
            return Err(Error::DegenerateComponent { component: k, mass });
        }
        let mut mean = vec![0.0; d];
        for (i, x) in samples.iter().enumerate() {
            let r = resp[i * m + k];
            for (acc, v) in mean.iter_mut().zip(x.iter()) {
                *acc += r * v;
            }
        }
        for v in mean.iter_mut() {
            *v /= mass;
        }
        let mut cov = vec![0.0; d * d];
        for (i, x) in samples.iter().enumerate() {
            let r = resp[i * m + k];
            if r == 0.0 {
                continue;
            }
            for a in 0..d {
                let da = x[a] - mean[a];
                for b in 0..=a {
                    cov[a * d + b] += r * da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / mass;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += COVARIANCE_REGULARIZATION;
        }
        comps.push(GmmComponent {
            weight: mass / n as f64,
            mean,
            covariance: cov,
        });
    }
    Ok(comps)
}

/// Fills `resp` with posterior responsibilities and returns the total
/// regularized log-likelihood. Each component density carries the factor
/// `exp(-(eps / 2) tr(S^-1))`, which makes `S + eps I` the exact M-step
/// maximizer, so EM never decreases this objective.
fn e_step(samples: &[&[f64]], comps: &[GmmComponent], d: usize, resp: &mut [f64]) -> Result<f64> {
    let m = comps.len();
    let gaussians = comps
        .iter()
        .enumerate()
        .map(|(k, c)| Gaussian::new(k, &c.mean, &c.covariance, d))
        .collect::<Result<Vec<_>>>()?;
    let log_weights: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    let mut total = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let row = &mut resp[i * m..(i + 1) * m];
        for k in 0..m {
            row[k] = log_weights[k] + gaussians[k].log_pdf(x) + gaussians[k].penalty;
        }
        let lse = log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    Ok(total)
}

/// Fits an `components`-component mixture by EM from a seeded k-means++
/// hard assignment. Stops when the log-likelihood gain falls below
/// `options.tol` or after `options.max_iter` iterations.
pub fn fit_gmm<P: AsRef<[f64]>>(
    samples: &[P],
    components: usize,
    options: FitOptions,
) -> Result<(GmmModel, FitReport)> {
    let needed = components.max(1);
    if components == 0 || samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.as_ref()).collect();
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidModel("samples have dimension 0".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(d, bad.len()));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { what: "samples" });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut resp = kmeanspp_assign(&rows, components, &mut rng)?;
    let mut comps = m_step(&rows, &resp, components, d)?;
    let mut ll = e_step(&rows, &comps, d, &mut resp)?;
    let mut lls = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        let next = m_step(&rows, &resp, components, d)?;
        let mut next_resp = vec![0.0; resp.len()];
        let next_ll = e_step(&rows, &next, d, &mut next_resp)?;
        iterations += 1;
        lls.push(next_ll);
        let gain = next_ll - ll;
        comps = next;
        resp = next_resp;
        ll = next_ll;
        if gain < options.tol {
            converged = true;
            break;
        }
    }
    let model = GmmModel::new(d, comps)?;
    let log_likelihood = model.log_likelihood(&rows)?;
    let report = FitReport {
        objective: lls,
        log_likelihood,
        aic: aic(log_likelihood, components, d),
        iterations,
        converged,
    };
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: usize,
    /// `(components, aic)` in candidate order.
    pub table: Vec<(usize, f64)>,
    pub model: GmmModel,
    pub report: FitReport,
}

/// Fits every candidate count with the same options and keeps the lowest
/// AIC; ties go to the smaller count. Counts that leave a component empty
/// or exceed the sample count are skipped; the error of the last skipped
/// count is returned when none fits.
pub fn select_components<P: AsRef<[f64]>>(
    samples: &[P],
    candidates: &[usize],
    options: FitOptions,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut fits = Vec::with_capacity(candidates.len());
    let mut skipped = None;
    for &m in candidates {
        match fit_gmm(samples, m, options) {
            Ok(fit) => fits.push((m, fit)),
            Err(e @ (Error::DegenerateComponent { .. } | Error::TooFewSamples { .. })) => {
                skipped = Some(e)
            }
            Err(e) => return Err(e),
        }
    }
    if fits.is_empty() {
        return Err(skipped.unwrap_or(Error::NoCandidates));
    }
    let table: Vec<(usize, f64)> = fits.iter().map(|(m, (_, r))| (*m, r.aic)).collect();
    let chosen = lowest_aic(&table);
    let (_, (model, report)) = fits
        .into_iter()
        .find(|(m, _)| *m == chosen)
        .expect("chosen count comes from the table");
    Ok(Selection {
        chosen,
        table,
        model,
        report,
    })
}

/// Component count with the lowest AIC, preferring the smaller count on ties.
pub fn lowest_aic(table: &[(usize, f64)]) -> usize {
    let mut best = table[0];
    for &(m, a) in &table[1..] {
        if a < best.1 || (a == best.1 && m < best.0) {
            best = (m, a);
        }
    }
    best.0
}

/// Draws a component by weight, a Gaussian vector from it, and projects it
/// onto the simplex. All-zero projections are redrawn.
pub fn sample_palette<R: Rng + ?Sized>(model: &GmmModel, rng: &mut R) -> Result<Palette> {
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = model.components.len() - 1;
        for (i, c) in model.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = DVector::from_iterator(
            model.dimension,
            (0..model.dimension).map(|_| StandardNormal.sample(rng)),
        );
        let x = &model.factors[k] * z + DVector::from_column_slice(&model.components[k].mean);
        match project_simplex(x.as_slice()) {
            Ok(p) => return Ok(p),
            Err(Error::AllZeroAfterClip) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateSample {
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}
