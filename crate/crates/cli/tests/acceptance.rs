//! Acceptance gate: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. Run with `--nocapture` to see the table.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use semantic_palette::gmm::{fit_gmm, select_components, FitOptions};
use semantic_palette::io::{write_label_map, PgmEncoding};
use semantic_palette::losses::matching_loss;
use semantic_palette::metrics::{frechet_distance, PopulationStats};
use semantic_palette::sinkhorn::{sinkhorn, TransportPlan};
use semantic_palette::synth::{gradcheck, random_palette};
use semantic_palette::transforms::{merge_edit, soften_ground_truth};
use semantic_palette::{
    argmax_labeling, hard_histogram, saa, synthesize, AugmentedSoftMask, FeatureTensor, HardLayout,
    Palette, Shape, SoftMask, SynthesisConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: Shape, std: f64) -> FeatureTensor {
    let data = (0..shape.len())
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    FeatureTensor::from_vec(shape, data).unwrap()
}

fn budget_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_budget: f64 = 0.0;
    let mut worst_column: f64 = 0.0;
    for k in 0..200 {
        let c = [2, 3, 5, 8][k % 4];
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=32));
        let f = normal_tensor(&mut rng, Shape::new(c, h, w), 3.0);
        let t = random_palette(c, &mut rng);
        let out = saa(&f, &t).unwrap();
        for (s, tc) in out.weighted.tensor().channel_sums().iter().zip(t.iter()) {
            worst_budget = worst_budget.max((s - tc).abs());
        }
        for s in out.mask.tensor().pixel_sums() {
            worst_column = worst_column.max((s - 1.0).abs());
        }
    }
    outcome(
        worst_budget <= 1e-9 && worst_column <= 1e-9,
        format!("max budget err {worst_budget:.2e}, max column err {worst_column:.2e}"),
    )
}

fn saa_is_one_step_sinkhorn() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=8);
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=32));
        let f = normal_tensor(&mut rng, Shape::new(c, h, w), 2.0);
        let t = random_palette(c, &mut rng);
        let m = sinkhorn(&f, &t, 1).unwrap().to_soft_mask(h, w).unwrap();
        let reference = saa(&f, &t).unwrap().mask;
        for (a, b) in m.as_slice().iter().zip(reference.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max abs diff {worst:.2e} over 100 seeds"),
    )
}

fn sinkhorn_converges() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let c = rng.random_range(2..=8);
        let n = rng.random_range(1..=512);
        let f = normal_tensor(&mut rng, Shape::new(c, 1, n), 1.0);
        let t = random_palette(c, &mut rng);
        let mut plan = TransportPlan::from_features(&f, &t).unwrap();
        for _ in 0..50 {
            plan.iterate(Default::default()).unwrap();
        }
        worst = worst.max(plan.row_residual()).max(plan.column_residual());
    }
    outcome(
        worst < 1e-6,
        format!("max marginal L1 residual {worst:.2e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_entry: f64 = 0.0;
    for seed in 0..50u64 {
        let c = 2 + (seed as usize % 4);
        let (h, w) = [(1, 1), (2, 3), (4, 4), (5, 8), (8, 8)][seed as usize % 5];
        let r = gradcheck(seed, c, h, w).unwrap();
        worst = worst.max(r.max_rel_err);
        worst_entry = worst_entry.max(r.max_entry_rel_err);
    }
    outcome(
        worst < 1e-5,
        format!("max relative error {worst:.2e} (per-entry, informational: {worst_entry:.2e})"),
    )
}

fn conditioning_claim() -> Outcome {
    let mut hits = 0;
    let mut kls = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let raw = random_palette(5, &mut rng);
        let t = Palette::new(raw.iter().map(|v| 0.02 + 0.9 * v).collect()).unwrap();
        let s = synthesize(&t, &SynthesisConfig::new(16, 32, seed)).unwrap();
        if s.trace.final_kl <= 0.05 {
            hits += 1;
        }
        kls.push(s.trace.final_kl);
    }
    let max = kls.iter().cloned().fold(0.0, f64::max);
    let mean = kls.iter().sum::<f64>() / kls.len() as f64;
    outcome(
        hits >= 18,
        format!("{hits}/20 runs with KL <= 0.05 (mean {mean:.4}, max {max:.4})"),
    )
}

fn zero_budget_exclusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..1000 {
        let c = rng.random_range(2..=8);
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let f = normal_tensor(&mut rng, Shape::new(c, h, w), 4.0);
        let zeroed = rng.random_range(0..c);
        let mut raw = random_palette(c, &mut rng).into_vec();
        raw[zeroed] = 0.0;
        let z: f64 = raw.iter().sum();
        let t = Palette::new(raw.into_iter().map(|v| v / z).collect()).unwrap();
        let labels = argmax_labeling(&saa(&f, &t).unwrap().mask);
        if labels.class_counts()[zeroed] > 0 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations in 1000 instances"),
    )
}

fn matching_degeneracy() -> Outcome {
    let t = Palette::new(vec![0.4, 0.4, 0.2]).unwrap();
    let m = SoftMask::from_vec(Shape::new(3, 1, 2), vec![0.5, 0.3, 0.3, 0.5, 0.2, 0.2]).unwrap();
    let loss = matching_loss(&m, &t).unwrap().value;
    let realized = hard_histogram(&argmax_labeling(&m));
    outcome(
        loss.abs() <= 1e-12 && realized[2] == 0.0,
        format!(
            "matching loss {loss:.2e}, realized {:?}",
            realized.as_slice()
        ),
    )
}

fn soft_ground_truth_argmax() -> Outcome {
    let mut failures = 0;
    for bits in 0u32..512 {
        let labels = (0..9).map(|k| (bits >> k) & 1).collect();
        let l = HardLayout::new(3, 3, 2, labels).unwrap();
        for sigma in [0.5, 1.0, 2.0] {
            let m = soften_ground_truth(&l, sigma, 0.4).unwrap();
            if argmax_labeling(&m) != l {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{failures} of 1536 layout/sigma pairs changed"),
    )
}

fn random_columns(rng: &mut ChaCha8Rng, c: usize, n: usize) -> Vec<f64> {
    let mut data: Vec<f64> = (0..c * n).map(|_| rng.random::<f64>() + 1e-3).collect();
    for p in 0..n {
        let s: f64 = (0..c).map(|k| data[k * n + p]).sum();
        for k in 0..c {
            data[k * n + p] /= s;
        }
    }
    data
}

fn merge_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let n = h * w;
        let g = SoftMask::from_vec(Shape::new(c + 1, h, w), random_columns(&mut rng, c + 1, n))
            .unwrap();
        let input =
            SoftMask::from_vec(Shape::new(c, h, w), random_columns(&mut rng, c, n)).unwrap();
        let out = merge_edit(&AugmentedSoftMask::new(g).unwrap(), &input).unwrap();
        for s in out.tensor().pixel_sums() {
            worst = worst.max((s - 1.0).abs());
        }

        let mut all_bg = vec![0.0; c * n];
        all_bg.extend(vec![1.0; n]);
        let all_bg =
            AugmentedSoftMask::new(SoftMask::from_vec(Shape::new(c + 1, h, w), all_bg).unwrap())
                .unwrap();
        exact &= merge_edit(&all_bg, &input).unwrap() == input;

        let mut no_bg = input.as_slice().to_vec();
        no_bg.extend(vec![0.0; n]);
        let no_bg =
            AugmentedSoftMask::new(SoftMask::from_vec(Shape::new(c + 1, h, w), no_bg).unwrap())
                .unwrap();
        exact &= merge_edit(&no_bg, &input).unwrap() == input;
    }
    outcome(
        worst <= 1e-9 && exact,
        format!("max column err {worst:.2e}, passthrough/projection exact: {exact}"),
    )
}

fn gaussian_samples(rng: &mut ChaCha8Rng, n: usize, mean: &[f64], scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Gaussian class-fraction vectors: noise confined to the simplex plane.
fn simplex_samples(rng: &mut ChaCha8Rng, n: usize, mean: &[f64], scale: f64) -> Vec<Vec<f64>> {
    let d = mean.len() as f64;
    gaussian_samples(rng, n, mean, scale)
        .into_iter()
        .map(|x| {
            let shift = (x.iter().sum::<f64>() - 1.0) / d;
            x.into_iter().map(|v| v - shift).collect()
        })
        .collect()
}

fn gmm_em() -> Outcome {
    let mut worst_drop: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = simplex_samples(&mut rng, 80, &[0.6, 0.3, 0.1], 0.04);
        s.extend(simplex_samples(&mut rng, 80, &[0.1, 0.3, 0.6], 0.04));
        let m = 1 + seed as usize % 4;
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        let (_, report) = fit_gmm(&s, m, opts).unwrap();
        for pair in report.objective.windows(2) {
            worst_drop = worst_drop.max(pair[0] - pair[1]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let samples = gaussian_samples(&mut rng, 150, &[0.2, 0.5, 0.3], 0.1);
    let (model, _) = fit_gmm(&samples, 1, FitOptions::default()).unwrap();
    let mut mean_err: f64 = 0.0;
    for d in 0..3 {
        let mean = samples.iter().map(|x| x[d]).sum::<f64>() / samples.len() as f64;
        mean_err = mean_err.max((model.components()[0].mean[d] - mean).abs());
    }

    let wins = (0..20u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let s = simplex_samples(&mut rng, 100, &[0.2, 0.5, 0.3], 0.05);
            let opts = FitOptions {
                seed,
                ..FitOptions::default()
            };
            select_components(&s, &[1, 5], opts).unwrap().chosen == 1
        })
        .count();
    outcome(
        worst_drop <= 1e-7 && mean_err <= 1e-10 && wins >= 18,
        format!(
            "worst objective drop {worst_drop:.2e}, M=1 mean err {mean_err:.2e}, AIC picks M=1 in {wins}/20"
        ),
    )
}

fn metric_properties() -> Outcome {
    let diag = |mean: [f64; 2], var: [f64; 2]| {
        PopulationStats::new(mean.to_vec(), vec![var[0], 0.0, 0.0, var[1]], 2).unwrap()
    };
    let means =
        frechet_distance(&diag([0.2, 0.8], [0.0, 0.0]), &diag([0.4, 0.6], [0.0, 0.0])).unwrap();
    let covs = frechet_distance(
        &diag([0.5, 0.5], [0.01, 0.04]),
        &diag([0.5, 0.5], [0.04, 0.01]),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sym: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for _ in 0..50 {
        let c = rng.random_range(2..=6);
        let random_stats = |rng: &mut ChaCha8Rng| {
            let a: Vec<f64> = (0..c * c).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut cov = vec![0.0; c * c];
            for i in 0..c {
                for j in 0..c {
                    cov[i * c + j] =
                        (0..c).map(|k| a[i * c + k] * a[j * c + k]).sum::<f64>() * 0.01;
                }
            }
            let mean = (0..c).map(|_| rng.random::<f64>()).collect();
            PopulationStats::new(mean, cov, 10).unwrap()
        };
        let a = random_stats(&mut rng);
        let b = random_stats(&mut rng);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        worst_sym = worst_sym.max((ab - ba).abs());
        worst_zero = worst_zero.max(frechet_distance(&a, &a).unwrap().abs());
    }
    let pass = (means - 0.08).abs() <= 1e-8
        && (covs - 0.02).abs() <= 1e-8
        && worst_sym <= 1e-9
        && worst_zero <= 1e-9;
    outcome(
        pass,
        format!("means case {means:.10}, covariance case {covs:.10}, asymmetry {worst_sym:.2e}, self {worst_zero:.2e}"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_sempal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..12 {
        let share = rng.random_range(0.1..0.6);
        let labels = (0..48)
            .map(|_| {
                let u: f64 = rng.random();
                if u < share {
                    0
                } else if u < 0.8 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let l = HardLayout::new(6, 8, 3, labels).unwrap();
        std::fs::write(
            corpus.join(format!("l{k:02}.pgm")),
            write_label_map(&l, PgmEncoding::Ascii).unwrap(),
        )
        .unwrap();
    }

    let mut failures = Vec::new();
    let mut checked = 0;
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        std::fs::create_dir(&dir).unwrap();
        std::fs::copy(corpus.join("l00.pgm"), dir.join("input.pgm")).unwrap();
        let c = corpus.to_str().unwrap();
        let commands: Vec<Vec<&str>> = vec![
            vec![
                "fit-palettes",
                c,
                "--components",
                "1..3",
                "--seed",
                "5",
                "--output",
                "model.json",
            ],
            vec![
                "sample-palettes",
                "model.json",
                "--count",
                "5",
                "--seed",
                "6",
                "--output",
                "palettes.txt",
            ],
            vec![
                "synthesize",
                "--palette",
                "[0.2,0.3,0.5]",
                "--size",
                "8x12",
                "--seed",
                "7",
                "--steps",
                "300",
                "--trace",
                "trace.json",
            ],
            vec![
                "synthesize",
                "--palette",
                "[0.2,0.3,0.5]",
                "--size",
                "9x9",
                "--seed",
                "7",
                "--steps",
                "300",
                "--multiscale",
                "--output",
                "multi.pgm",
            ],
            vec![
                "edit",
                "input.pgm",
                "--region",
                "1,2,3,4",
                "--palette",
                "[0,0,1]",
                "--seed",
                "8",
                "--steps",
                "300",
                "--trace",
                "edit_trace.json",
            ],
            vec![
                "metrics",
                "--target",
                "[0.3,0.4,0.3]",
                "--layouts",
                c,
                "--reference",
                c,
                "--output",
                "metrics.json",
            ],
            vec!["gradcheck", "--seed", "9", "--output", "gradcheck.json"],
            vec!["render", "layout.pgm", "--output", "layout.ppm"],
        ];
        for cmd in &commands {
            let (code, _) = run_cli(&dir, cmd);
            if code != 0 {
                failures.push(format!("{} exited {code}", cmd[0]));
            }
        }
    }
    let files = [
        "model.json",
        "palettes.txt",
        "layout.pgm",
        "trace.json",
        "multi.pgm",
        "edited.pgm",
        "edit_trace.json",
        "metrics.json",
        "gradcheck.json",
        "layout.ppm",
    ];
    for f in files {
        let a = std::fs::read(root.path().join("a").join(f));
        let b = std::fs::read(root.path().join("b").join(f));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => checked += 1,
            (Ok(_), Ok(_)) => failures.push(format!("{f} differs")),
            _ => failures.push(format!("{f} missing")),
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} output files bytewise identical across two runs of 7 subcommands")
        } else {
            failures.join("; ")
        },
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "budget exactness",
            Duration::from_secs(5),
            budget_exactness,
        ),
        (
            2,
            "SAA equals one Sinkhorn step",
            Duration::from_secs(2),
            saa_is_one_step_sinkhorn,
        ),
        (
            3,
            "Sinkhorn convergence",
            Duration::from_secs(5),
            sinkhorn_converges,
        ),
        (
            4,
            "gradient correctness",
            Duration::from_secs(30),
            gradient_correctness,
        ),
        (
            5,
            "desk-scale conditioning",
            Duration::from_secs(120),
            conditioning_claim,
        ),
        (
            6,
            "zero-budget exclusion",
            Duration::from_secs(5),
            zero_budget_exclusion,
        ),
        (
            7,
            "matching-loss degeneracy",
            Duration::from_secs(1),
            matching_degeneracy,
        ),
        (
            8,
            "soft ground truth keeps argmax",
            Duration::from_secs(10),
            soft_ground_truth_argmax,
        ),
        (9, "merge validity", Duration::from_secs(5), merge_validity),
        (10, "GMM/EM", Duration::from_secs(30), gmm_em),
        (11, "metrics", Duration::from_secs(1), metric_properties),
        (
            12,
            "CLI determinism",
            Duration::from_secs(60),
            cli_determinism,
        ),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        println!(
            "[{}] {id:>2} {name}: {} ({:.2}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
