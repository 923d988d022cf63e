//! Proportion KL and the Fréchet distance between populations of layouts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{hard_histogram, HardLayout};
use crate::losses::HISTOGRAM_FLOOR;
use crate::palette::Palette;

/// `KL(target || realized)` with the realized histogram floored at `1e-8`
/// and renormalized. Only classes with a positive target are floored, so a
/// layout that matches the target exactly scores 0.
pub fn proportion_kl(target: &Palette, layout: &HardLayout) -> Result<f64> {
    if target.classes() != layout.classes() {
        return Err(Error::DimensionMismatch(target.classes(), layout.classes()));
    }
    Ok(kl_floored(
        target.as_slice(),
        hard_histogram(layout).as_slice(),
    ))
}

pub(crate) fn kl_floored(target: &[f64], realized: &[f64]) -> f64 {
    let floored: Vec<f64> = target
        .iter()
        .zip(realized)
        .map(|(&t, &r)| if t > 0.0 { r.max(HISTOGRAM_FLOOR) } else { r })
        .collect();
    let z: f64 = floored.iter().sum();
    target
        .iter()
        .zip(&floored)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &r)| t * (t / (r / z)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mean and covariance of per-layout class-fraction vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl PopulationStats {
    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    /// Gaussian statistics given directly; the covariance is symmetrized.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, n: usize) -> Result<Self> {
        let c = mean.len();
        if covariance.len() != c * c {
            return Err(Error::DimensionMismatch(c * c, covariance.len()));
        }
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        let cov = DMatrix::from_row_slice(c, c, &covariance);
        Ok(PopulationStats {
            mean: DVector::from_vec(mean),
            covariance: (&cov + cov.transpose()) * 0.5,
            n,
        })
    }
}

/// Sample statistics of the hard histograms; the covariance is unbiased
/// for `n > 1` and zero for a single layout.
pub fn population_stats(layouts: &[HardLayout]) -> Result<PopulationStats> {
    let first = layouts.first().ok_or(Error::EmptyPopulation)?;
    let c = first.classes();
    if let Some(other) = layouts.iter().find(|l| l.classes() != c) {
        return Err(Error::MixedClassCounts {
            first: c,
            other: other.classes(),
        });
    }
    let hists: Vec<DVector<f64>> = layouts
        .iter()
        .map(|l| DVector::from_vec(hard_histogram(l).into_vec()))
        .collect();
    let n = hists.len();
    let mean = hists.iter().fold(DVector::zeros(c), |acc, h| acc + h) / n as f64;
    let mut covariance = DMatrix::zeros(c, c);
    if n > 1 {
        for h in &hists {
            let d = h - &mean;
            covariance += &d * d.transpose();
        }
        covariance /= (n - 1) as f64;
        covariance = (&covariance + covariance.transpose()) * 0.5;
    }
    Ok(PopulationStats {
        mean,
        covariance,
        n,
    })
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &PopulationStats, b: &PopulationStats) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch(a.dimension(), b.dimension()));
    }
    if a.mean == b.mean && a.covariance == b.covariance {
        return Ok(0.0);
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = symmetric_sqrt(&a.covariance);
    let inner = &root_a * &b.covariance * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = diff + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Summary of a KL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSummary {
    pub mean: f64,
    pub max: f64,
}

/// Report written by the `metrics` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kl: KlSummary,
    pub fsd: Option<f64>,
    pub n_layouts: usize,
    pub per_class_realized: Vec<f64>,
}

/// KL of every layout against `target`, the mean realized histogram, and
/// the FSD against `reference` when given.
pub fn metric_report(
    target: &Palette,
    layouts: &[HardLayout],
    reference: Option<&[HardLayout]>,
) -> Result<MetricReport> {
    let stats = population_stats(layouts)?;
    let kls = layouts
        .iter()
        .map(|l| proportion_kl(target, l))
        .collect::<Result<Vec<_>>>()?;
    let fsd = match reference {
        Some(r) => Some(frechet_distance(&population_stats(r)?, &stats)?),
        None => None,
    };
    Ok(MetricReport {
        kl: KlSummary {
            mean: kls.iter().sum::<f64>() / kls.len() as f64,
            max: kls.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
        fsd,
        n_layouts: layouts.len(),
        per_class_realized: stats.mean.iter().cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(labels: &[u32], classes: usize) -> HardLayout {
        HardLayout::new(1, labels.len(), classes, labels.to_vec()).unwrap()
    }

    fn diag_stats(mean: [f64; 2], var: [f64; 2]) -> PopulationStats {
        PopulationStats::new(mean.to_vec(), vec![var[0], 0.0, 0.0, var[1]], 2).unwrap()
    }

    #[test]
    fn kl_examples() {
        let t = Palette::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(proportion_kl(&t, &layout(&[0, 1], 2)).unwrap(), 0.0);
        let kl = proportion_kl(&t, &layout(&[0, 1, 1, 1], 2)).unwrap();
        let expected = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((kl - expected).abs() < 1e-7);
        assert!((kl - 0.143841).abs() < 1e-6);

        let t = Palette::new(vec![0.4, 0.4, 0.2]).unwrap();
        let kl = proportion_kl(&t, &layout(&[0, 1], 3)).unwrap();
        let z: f64 = 1.0 + 1e-8;
        let expected = 2.0 * 0.4 * (0.4 / (0.5 / z)).ln() + 0.2 * (0.2 / (1e-8 / z)).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!(kl > 2.5 && kl.is_finite());
        assert!(proportion_kl(&t, &layout(&[0, 1], 2)).is_err());

        let one_hot = Palette::one_hot(3, 1).unwrap();
        assert_eq!(proportion_kl(&one_hot, &layout(&[1, 1], 3)).unwrap(), 0.0);
    }

    #[test]
    fn population_examples() {
        let single = population_stats(&[layout(&[0, 1, 1, 1], 2)]).unwrap();
        assert_eq!(single.mean.as_slice(), &[0.25, 0.75]);
        assert!(single.covariance.iter().all(|&v| v == 0.0));

        let a = layout(&[0, 1, 1, 1, 1], 2);
        let b = layout(&[0, 0, 1, 1, 1], 2);
        let s = population_stats(&[a.clone(), b]).unwrap();
        assert!((s.mean[0] - 0.3).abs() < 1e-15 && (s.mean[1] - 0.7).abs() < 1e-15);
        // unbiased variance of {0.2, 0.4} is 0.02
        assert!((s.covariance[(0, 0)] - 0.02).abs() < 1e-15);
        assert!((s.covariance[(0, 1)] + 0.02).abs() < 1e-15);

        let same = population_stats(&[a.clone(), a.clone(), a]).unwrap();
        assert!(same.covariance.iter().all(|&v| v.abs() < 1e-15));

        assert!(matches!(population_stats(&[]), Err(Error::EmptyPopulation)));
        assert!(matches!(
            population_stats(&[layout(&[0], 2), layout(&[0], 3)]),
            Err(Error::MixedClassCounts { first: 2, other: 3 })
        ));
    }

    #[test]
    fn frechet_closed_forms() {
        let a = diag_stats([0.2, 0.8], [0.0, 0.0]);
        let b = diag_stats([0.4, 0.6], [0.0, 0.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 0.08).abs() < 1e-12);

        let a = diag_stats([0.5, 0.5], [0.01, 0.04]);
        let b = diag_stats([0.5, 0.5], [0.04, 0.01]);
        assert!((frechet_distance(&a, &b).unwrap() - 0.02).abs() < 1e-12);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);

        let c = PopulationStats::new(vec![0.3; 3], vec![0.0; 9], 1).unwrap();
        assert!(matches!(
            frechet_distance(&a, &c),
            Err(Error::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn report_shape() {
        let t = Palette::new(vec![0.5, 0.5]).unwrap();
        let ls = vec![layout(&[0, 1], 2), layout(&[0, 1, 1, 1], 2)];
        let r = metric_report(&t, &ls, Some(&ls)).unwrap();
        assert_eq!(r.n_layouts, 2);
        assert!(r.fsd.unwrap().abs() < 1e-12);
        assert!((r.kl.max - 0.143841).abs() < 1e-6);
        assert!((r.kl.mean - r.kl.max / 2.0).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["kl"]["mean"].is_number());
        assert_eq!(json["per_class_realized"].as_array().unwrap().len(), 2);
        let none = metric_report(&t, &ls, None).unwrap();
        assert!(serde_json::to_value(&none).unwrap()["fsd"].is_null());
    }
}
