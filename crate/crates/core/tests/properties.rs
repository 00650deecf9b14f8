use std::collections::BTreeMap;

use hardmix_core::data::{ActionChunkPair, JointLimit, JointTrajectory, Matrix, SampleRecord, Source};
use hardmix_core::metrics::{action_mse_score, execution_report, smoothness_score, unified_scores, RawScores};
use hardmix_core::quality::{
    apply_filter, clip_alignment, depth_metrics, AlignmentReport, DepthGrid, FilterConfig, ImageGrid, Matcher,
    PatchMatcher, PromptEmbeddings, QualityReport,
};
use hardmix_core::sampler::{compute_weights, BatchSampler, Phase, SamplerConfig, Stratum};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-100.0f64..100.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn chunk_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..12, 1usize..8).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

fn trajectory() -> impl Strategy<Value = JointTrajectory> {
    (3usize..20, 1usize..7, 0.01f64..1.0).prop_flat_map(|(f, j, dt)| {
        matrix(f, j).prop_map(move |m| JointTrajectory::new(m, dt, vec![JointLimit::new(-200.0, 200.0); j]).unwrap())
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn mse_ignores_joint_order((p, r) in chunk_pair(), seed in any::<u64>()) {
        let cols = p.cols();
        let mut perm: Vec<usize> = (0..cols).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..cols).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffle = |m: &Matrix| {
            let data = (0..m.rows()).flat_map(|t| perm.iter().map(move |&j| m.get(t, j))).collect();
            Matrix::new(m.rows(), cols, data).unwrap()
        };
        let base = action_mse_score(&ActionChunkPair::new(p.clone(), r.clone(), 0).unwrap()).unwrap();
        let permuted = action_mse_score(&ActionChunkPair::new(shuffle(&p), shuffle(&r), 0).unwrap()).unwrap();
        prop_assert!(rel_close(base, permuted, 1e-12));
    }

    #[test]
    fn mse_scales_quadratically((p, r) in chunk_pair(), c in 0.01f64..50.0) {
        let base = action_mse_score(&ActionChunkPair::new(p.clone(), r.clone(), 0).unwrap()).unwrap();
        let scaled = action_mse_score(&ActionChunkPair::new(p.map(|v| v * c), r.map(|v| v * c), 0).unwrap()).unwrap();
        prop_assert!(rel_close(scaled, c * c * base, 1e-9));
    }

    #[test]
    fn smoothness_ignores_affine_drift(t in trajectory(), slope in -50.0f64..50.0, offset in -50.0f64..50.0, joint in 0usize..7) {
        let j = joint % t.joints();
        let rows: Vec<Vec<f64>> = (0..t.frames())
            .map(|k| {
                let mut row = t.frame(k).to_vec();
                row[j] += offset + slope * k as f64;
                row
            })
            .collect();
        let drifted = JointTrajectory::new(Matrix::from_rows(&rows).unwrap(), t.dt(), t.limits().to_vec()).unwrap();
        let a = smoothness_score(&t, 0, t.frames()).unwrap();
        let b = smoothness_score(&drifted, 0, t.frames()).unwrap();
        // Affine terms cancel up to rounding of the shifted angles.
        let scale = 4.0 * (slope.abs() * t.frames() as f64 + offset.abs() + 200.0) / (t.dt() * t.dt());
        let terms = ((t.frames() - 2) * t.joints()) as f64;
        prop_assert!((a - b).abs() <= 1e-12 * scale * terms, "{} vs {}", a, b);
    }

    #[test]
    fn acceleration_shares_the_smoothness_kernel(t in trajectory()) {
        let smooth = smoothness_score(&t, 0, t.frames()).unwrap();
        let accel = execution_report(&t).mean_ang_accel.unwrap();
        let terms = ((t.frames() - 2) * t.joints()) as f64;
        prop_assert!(rel_close(accel, -smooth / terms, 1e-12));
    }

    #[test]
    fn unified_scores_span_and_fuse(raw in prop::collection::vec((-100.0f64..0.0, -1e4f64..0.0, 0u8..=1), 2..30)) {
        let raw: Vec<RawScores> = raw.into_iter().map(|(mse, smooth, limit)| RawScores { mse, smooth, limit }).collect();
        let n = unified_scores(&raw).unwrap();
        let channels: [(fn(&RawScores) -> f64, fn(&hardmix_core::metrics::NormalizedScores) -> f64); 3] = [
            (|r| r.mse, |n| n.mse_n),
            (|r| r.smooth, |n| n.smooth_n),
            (|r| f64::from(r.limit), |n| n.limit_n),
        ];
        for (raw_of, norm_of) in channels {
            let vals: Vec<f64> = raw.iter().map(raw_of).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (v, s) in vals.iter().zip(&n) {
                let x = norm_of(s);
                if lo == hi {
                    prop_assert_eq!(x, 0.5);
                } else if *v == lo {
                    prop_assert_eq!(x, 0.0);
                } else if *v == hi {
                    prop_assert_eq!(x, 1.0);
                } else {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
            }
        }
        for s in &n {
            prop_assert_eq!(s.fused, (s.mse_n + s.smooth_n + s.limit_n) / 3.0);
        }
    }

    #[test]
    fn improving_a_channel_never_lowers_the_fused_score(
        raw in prop::collection::vec((-100.0f64..0.0, -1e4f64..0.0, 0u8..=1), 3..20),
        pick in any::<prop::sample::Index>(),
        t in 0.0f64..1.0,
    ) {
        let raw: Vec<RawScores> = raw.into_iter().map(|(mse, smooth, limit)| RawScores { mse, smooth, limit }).collect();
        let i = pick.index(raw.len());
        let max_mse = raw.iter().map(|r| r.mse).fold(f64::NEG_INFINITY, f64::max);
        let mut better = raw.clone();
        // Move toward the cohort maximum so the extremes stay fixed.
        better[i].mse += t * (max_mse - better[i].mse);
        let before = unified_scores(&raw).unwrap()[i].fused;
        let after = unified_scores(&better).unwrap()[i].fused;
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn depth_scale_invariance(
        values in prop::collection::vec((0.05f64..20.0, 0.05f64..20.0), 1..64),
        c in prop::sample::select(vec![0.1, 3.0, 1000.0, 0.37, 42.0]),
    ) {
        let n = values.len();
        let pred: Vec<f64> = values.iter().map(|v| v.0).collect();
        let gt: Vec<f64> = values.iter().map(|v| v.1).collect();
        let g = |v: Vec<f64>| DepthGrid::from_values(1, 1, n, v).unwrap();
        let base = depth_metrics(&g(pred.clone()), &g(gt.clone())).unwrap();
        let scaled = depth_metrics(&g(pred.iter().map(|p| p * c).collect()), &g(gt.clone())).unwrap();
        for (a, b) in [(scaled.rmse, base.rmse), (scaled.abs_rel, base.abs_rel), (scaled.sq_rel, base.sq_rel)] {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
        }
        let own = depth_metrics(&g(gt.clone()), &g(gt)).unwrap();
        prop_assert_eq!((own.rmse, own.abs_rel, own.sq_rel), (0.0, 0.0, 0.0));
    }

    #[test]
    fn alignment_ignores_positive_rescaling(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 5),
        scales in prop::collection::vec(0.01f64..100.0, 5),
    ) {
        prop_assume!(vecs.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let prompt = |s: &[f64]| PromptEmbeddings {
            foreground: vecs[0].iter().map(|x| x * s[0]).collect(),
            background: vecs[1].iter().map(|x| x * s[1]).collect(),
            lighting: vecs[2].iter().map(|x| x * s[2]).collect(),
        };
        let frames = |s: &[f64]| vec![
            vecs[3].iter().map(|x| x * s[3]).collect::<Vec<f64>>(),
            vecs[4].iter().map(|x| x * s[4]).collect(),
        ];
        let ones = [1.0; 5];
        let a = clip_alignment(&frames(&ones), &prompt(&ones)).unwrap();
        let b = clip_alignment(&frames(&scales), &prompt(&scales)).unwrap();
        for (x, y) in [(a.foreground, b.foreground), (a.background, b.background), (a.lighting, b.lighting), (a.overall, b.overall)] {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn filter_is_idempotent_and_leaves_real_samples_alone(
        specs in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..20),
        threshold in 0.0f64..1.0,
    ) {
        let t = JointTrajectory::new(Matrix::new(1, 1, vec![0.0]).unwrap(), 0.1, vec![JointLimit::new(-1.0, 1.0)]).unwrap();
        let samples: Vec<SampleRecord> = specs
            .iter()
            .enumerate()
            .map(|(i, &(real, sim))| {
                let mut s = SampleRecord::new(format!("s{i}"), if real { Source::Real } else { Source::Generated }, "t", t.clone());
                if !real {
                    s.quality = Some(QualityReport {
                        alignment: Some(AlignmentReport { foreground: sim, background: sim, lighting: sim, overall: sim }),
                        ..QualityReport::default()
                    });
                }
                s
            })
            .collect();
        let cfg = FilterConfig { min_overall_sim: Some(threshold), ..FilterConfig::default() };
        let once = apply_filter(samples.clone(), &cfg).unwrap();
        let twice = apply_filter(once.clone(), &cfg).unwrap();
        prop_assert_eq!(&once, &twice);
        for (before, after) in samples.iter().zip(&once) {
            if before.source == Source::Real {
                prop_assert_eq!(before, after);
            } else {
                let keep = before.quality.as_ref().unwrap().alignment.unwrap().overall >= threshold;
                prop_assert_eq!(after.is_retained(), keep);
            }
        }
    }

    #[test]
    fn weights_sum_per_stratum_and_follow_scores(
        specs in prop::collection::vec((any::<bool>(), 0.0f64..=1.0, any::<bool>()), 2..40),
        gamma in 0.01f64..2.0,
        lambda in 0.0f64..3.0,
    ) {
        prop_assume!(specs.iter().any(|s| s.0 && !s.2) && specs.iter().any(|s| !s.0 && !s.2));
        let t = JointTrajectory::new(Matrix::new(1, 1, vec![0.0]).unwrap(), 0.1, vec![JointLimit::new(-1.0, 1.0)]).unwrap();
        let samples: Vec<SampleRecord> = specs
            .iter()
            .enumerate()
            .map(|(i, &(real, score, filtered))| {
                let mut s = SampleRecord::new(format!("s{i:02}"), if real { Source::Real } else { Source::Generated }, "t", t.clone());
                s.score = Some(score);
                if filtered {
                    s.weight = Some(0.0);
                }
                s
            })
            .collect();
        let cfg = SamplerConfig { gamma, lambda, ..SamplerConfig::default() };
        let table = compute_weights(&samples, &cfg, Phase::Adaptive).unwrap();
        for st in [Stratum::Real, Stratum::Generated] {
            prop_assert!((table.stratum_total(st) - 1.0).abs() <= 1e-12);
        }
        for (s, &(real, score, filtered)) in samples.iter().zip(&specs) {
            let w = table.weight(&s.id).unwrap();
            if filtered {
                prop_assert_eq!(w, 0.0);
                continue;
            }
            let n = specs.iter().filter(|o| o.0 == real && !o.2).count() as f64;
            prop_assert!(w >= gamma / (n * (gamma + lambda)) * (1.0 - 1e-12));
            for (o, &(oreal, oscore, ofilt)) in samples.iter().zip(&specs) {
                if oreal == real && !ofilt && score < oscore {
                    prop_assert!(w >= table.weight(&o.id).unwrap());
                }
            }
        }
    }
}

/// Exhaustive horizontal SSD search written without reference to the crate.
fn oracle_match_count(center: &[f64], side: &[f64], h: usize, w: usize, tau: f64) -> usize {
    let p = 8;
    let mut matched = 0;
    let mut cy = 0;
    while cy + p <= h {
        let mut cx = 0;
        while cx + p <= w {
            let mut best = f64::INFINITY;
            for sx in 0..=w - p {
                let mut ssd = 0.0;
                for dy in 0..p {
                    for dx in 0..p {
                        let d = center[(cy + dy) * w + cx + dx] - side[(cy + dy) * w + sx + dx];
                        ssd += d * d;
                    }
                }
                best = best.min(ssd);
            }
            if best <= tau {
                matched += 1;
            }
            cx += p;
        }
        cy += p;
    }
    matched
}

#[test]
fn matcher_agrees_with_exhaustive_oracle_under_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (h, w) = (24, 64);
    let matcher = PatchMatcher::default();
    let mut totals = (0, 0);
    for trial in 0..20 {
        let center: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let shift = rng.random_range(0..w);
        // Noise straddles the threshold so some patches match and some do not.
        let sigma = [0.0, 5e-4, 1e-3, 2e-3][trial % 4];
        let side: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let noisy = rng.random_range(-1.0..1.0) * sigma * if rng.random_bool(0.5) { 1.0 } else { 3.0 };
                center[y * w + (x + w - shift) % w] + noisy
            })
            .collect();
        let ours = matcher
            .correspondences(
                &ImageGrid::new(h, w, center.clone()).unwrap(),
                &ImageGrid::new(h, w, side.clone()).unwrap(),
            )
            .unwrap()
            .len();
        let oracle = oracle_match_count(&center, &side, h, w, matcher.tau);
        assert_eq!(ours, oracle, "trial {trial}, shift {shift}, sigma {sigma}");
        totals.0 += ours;
        totals.1 += (h / 8) * (w / 8);
    }
    assert!(
        totals.0 > 0 && totals.0 < totals.1,
        "noise levels should produce a mix: {totals:?}"
    );
}

#[test]
fn every_retained_sample_is_drawn_at_m_equal_1000_n() {
    let t = JointTrajectory::new(
        Matrix::new(1, 1, vec![0.0]).unwrap(),
        0.1,
        vec![JointLimit::new(-1.0, 1.0)],
    )
    .unwrap();
    let n = 30;
    let samples: Vec<SampleRecord> = (0..n)
        .map(|i| {
            let mut s = SampleRecord::new(format!("g{i:02}"), Source::Generated, "t", t.clone());
            // Mostly easy samples, so the hardest one dominates the weights.
            s.score = Some(if i == 0 { 0.0 } else { 1.0 });
            s
        })
        .collect();
    let cfg = SamplerConfig {
        alpha: 1.0,
        batch_size: 100,
        seed: 13,
        ..SamplerConfig::default()
    };
    let table = compute_weights(&samples, &cfg, Phase::Adaptive).unwrap();
    let sampler = BatchSampler::new(&table, &cfg).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for step in 0..(1000 * n / 100) as u64 {
        for id in sampler.draw_batch(step) {
            *counts.entry(id).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), n, "some retained sample was never drawn");
}

#[test]
fn identical_inputs_give_identical_batch_streams() {
    let t = JointTrajectory::new(
        Matrix::new(1, 1, vec![0.0]).unwrap(),
        0.1,
        vec![JointLimit::new(-1.0, 1.0)],
    )
    .unwrap();
    let samples: Vec<SampleRecord> = (0..10)
        .map(|i| {
            let src = if i % 2 == 0 { Source::Real } else { Source::Generated };
            let mut s = SampleRecord::new(format!("s{i}"), src, "t", t.clone());
            s.score = Some(i as f64 / 10.0);
            s
        })
        .collect();
    let cfg = SamplerConfig {
        seed: 7,
        batch_size: 16,
        ..SamplerConfig::default()
    };
    let stream = || {
        let table = compute_weights(&samples, &cfg, Phase::Adaptive).unwrap();
        let s = BatchSampler::new(&table, &cfg).unwrap();
        (0..200).map(|step| s.draw_batch(step)).collect::<Vec<_>>()
    };
    assert_eq!(stream(), stream());
    let other = SamplerConfig { seed: 8, ..cfg.clone() };
    let table = compute_weights(&samples, &other, Phase::Adaptive).unwrap();
    let s = BatchSampler::new(&table, &other).unwrap();
    assert_ne!(stream(), (0..200).map(|step| s.draw_batch(step)).collect::<Vec<_>>());
}
