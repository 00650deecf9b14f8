//! Synthetic end-to-end run over a generated cohort of easy and hard
//! episodes, some of whose generated views are deliberately corrupt.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    io_err, read_text, run_filter, run_sample, run_score, FilterOutcome, PipelineError, Result, SampleOutcome,
};
use crate::config::PipelineConfig;
use crate::data::binary::{self, Embeddings, Grid};
use crate::data::manifest::{write_manifest, DatasetManifest, DepthFiles, ManifestRecord, ViewFiles};
use crate::data::{ActionChunkPair, JointLimit, JointTrajectory, Matrix, Source};
use crate::quality::FilterConfig;
use crate::sampler::{parse_plan_jsonl, PlanFormat, PlanRecord, SamplerConfig, Stratum, WeightTable};

pub const DEMO_SAMPLES: usize = 200;

const FRAMES: usize = 40;
const JOINTS: usize = 6;
const DT: f64 = 0.05;
const WINDOW_STARTS: [usize; 3] = [0, 15, 30];
const WINDOW_LEN: usize = 10;
const VIEW_H: usize = 16;
const VIEW_W: usize = 48;
const SHIFT: usize = 8;
const EMBED_DIM: usize = 16;
const STEPS: u64 = 1_000;
const RATIO_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub filter: FilterOutcome,
    pub scores_path: PathBuf,
    pub sample: SampleOutcome,
    pub measured_ratio: f64,
    pub expected_ratio: f64,
    pub filtered_draws: u64,
}

impl DemoOutcome {
    pub fn summary(&self) -> String {
        format!(
            "{}\nhard/easy draw ratio {:.4} (expected {:.4}, tolerance {:.0}%)\nfiltered samples drawn: {}",
            self.filter.summary(),
            self.measured_ratio,
            self.expected_ratio,
            RATIO_TOLERANCE * 100.0,
            self.filtered_draws
        )
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Defect {
    None,
    Depth,
    Views,
    Prompt,
}

struct Spec {
    id: String,
    source: Source,
    hard: bool,
    defect: Defect,
}

fn specs() -> Vec<Spec> {
    (0..DEMO_SAMPLES)
        .map(|i| {
            let source = if i < DEMO_SAMPLES / 2 {
                Source::Real
            } else {
                Source::Generated
            };
            let hard = i % 3 == 0;
            let defect = match (source, i % 10, (i / 10) % 3) {
                (Source::Generated, 5, 0) => Defect::Depth,
                (Source::Generated, 5, 1) => Defect::Views,
                (Source::Generated, 5, _) => Defect::Prompt,
                _ => Defect::None,
            };
            Spec {
                id: format!("{}_{}_{i:03}", source.as_str(), if hard { "hard" } else { "easy" }),
                source,
                hard,
                defect,
            }
        })
        .collect()
}

pub fn demo_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        filter: FilterConfig {
            min_mat_pix: Some(6.0),
            max_sq_rel: Some(0.1),
            min_overall_sim: Some(0.3),
        },
        sampler: SamplerConfig {
            seed,
            total_steps: STEPS,
            phase_switch_step: Some(STEPS / 2),
            batch_size: 64,
            ..SamplerConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn trajectory(rng: &mut ChaCha8Rng, hard: bool, tight_limit: bool) -> JointTrajectory {
    let jitter = Normal::new(0.0, 3.0).expect("valid sigma");
    let mut angles = Vec::with_capacity(FRAMES * JOINTS);
    let params: Vec<(f64, f64, f64)> = (0..JOINTS)
        .map(|_| {
            (
                rng.random_range(10.0..40.0),
                rng.random_range(0.2..1.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    for k in 0..FRAMES {
        let t = k as f64 * DT;
        for &(amp, freq, phase) in &params {
            let mut a = amp * (std::f64::consts::TAU * freq * t + phase).sin();
            if hard {
                a += jitter.sample(rng);
            }
            angles.push(a);
        }
    }
    let mut limits = vec![JointLimit::new(-180.0, 180.0); JOINTS];
    if tight_limit {
        limits[0] = JointLimit::new(-5.0, 5.0);
    }
    JointTrajectory::new(Matrix::new(FRAMES, JOINTS, angles).expect("sized"), DT, limits).expect("sized")
}

fn predictions(rng: &mut ChaCha8Rng, traj: &JointTrajectory, hard: bool) -> Vec<ActionChunkPair> {
    let noise = Normal::new(0.0, if hard { 8.0 } else { 0.5 }).expect("valid sigma");
    WINDOW_STARTS
        .iter()
        .map(|&start| {
            let reference = crate::data::window(traj, start, WINDOW_LEN).expect("window in range");
            let values = reference.as_slice().iter().map(|v| v + noise.sample(rng)).collect();
            let predicted = Matrix::new(reference.rows(), reference.cols(), values).expect("sized");
            ActionChunkPair::new(predicted, reference, start).expect("matching shapes")
        })
        .collect()
}

fn depth_pair(rng: &mut ChaCha8Rng, bad: bool) -> (Grid, Grid) {
    let n = 2 * 8 * 8;
    let gt: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
    let pred: Vec<f64> = if bad {
        (0..n).map(|_| rng.random_range(1.0..5.0)).collect()
    } else {
        gt.iter()
            .map(|g| 0.5 * g * (1.0 + rng.random_range(-0.01..0.01)))
            .collect()
    };
    (
        Grid::new(2, 8, 8, pred).expect("sized"),
        Grid::new(2, 8, 8, gt).expect("sized"),
    )
}

fn shifted(center: &[f64], shift: isize) -> Vec<f64> {
    let mut out = vec![0.0; center.len()];
    for f in 0..center.len() / (VIEW_H * VIEW_W) {
        for y in 0..VIEW_H {
            for x in 0..VIEW_W {
                let sx = (x as isize + shift).rem_euclid(VIEW_W as isize) as usize;
                let base = f * VIEW_H * VIEW_W + y * VIEW_W;
                out[base + sx] = center[base + x];
            }
        }
    }
    out
}

fn views(rng: &mut ChaCha8Rng, bad: bool) -> (Grid, Grid, Grid) {
    let n = 2 * VIEW_H * VIEW_W;
    let mut noise = || (0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
    let center = noise();
    let (left, right) = if bad {
        (noise(), noise())
    } else {
        (shifted(&center, SHIFT as isize), shifted(&center, -(SHIFT as isize)))
    };
    let g = |v| Grid::new(2, VIEW_H, VIEW_W, v).expect("sized");
    (g(center), g(left), g(right))
}

fn embeddings(rng: &mut ChaCha8Rng, bad: bool) -> (Embeddings, Embeddings) {
    let normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut vector = || (0..EMBED_DIM).map(|_| normal.sample(rng)).collect::<Vec<f64>>();
    let prompts: Vec<Vec<f64>> = (0..3).map(|_| vector()).collect();
    let frames = (0..4)
        .map(|_| {
            if bad {
                vector()
            } else {
                let jitter = vector();
                (0..EMBED_DIM)
                    .map(|d| prompts.iter().map(|p| p[d]).sum::<f64>() + 0.1 * jitter[d])
                    .collect()
            }
        })
        .collect();
    (
        Embeddings {
            dim: EMBED_DIM,
            vectors: frames,
        },
        Embeddings {
            dim: EMBED_DIM,
            vectors: prompts,
        },
    )
}

/// Writes the synthetic cohort under `dir` and returns the manifest path.
pub fn write_cohort(seed: u64, dir: &Path) -> Result<PathBuf> {
    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(io_err(&data))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::new("demo", dir);
    for (i, spec) in specs().into_iter().enumerate() {
        let put = |name: String, bytes: Vec<u8>| -> Result<String> {
            binary::write_file(&data.join(&name), &bytes)?;
            Ok(format!("data/{name}"))
        };
        let traj = trajectory(&mut rng, spec.hard, spec.hard && i % 6 == 0);
        let preds = predictions(&mut rng, &traj, spec.hard);
        let mut rec = ManifestRecord::new(
            spec.id.clone(),
            spec.source,
            "demo",
            put(format!("{}.traj", spec.id), binary::encode_trajectory(&traj))?,
        );
        rec.pred_file = Some(put(format!("{}.pred", spec.id), binary::encode_predictions(&preds))?);
        if spec.source == Source::Generated {
            let (dp, dg) = depth_pair(&mut rng, spec.defect == Defect::Depth);
            rec.depth_files = Some(DepthFiles {
                pred: put(format!("{}.depth_pred", spec.id), binary::encode_grid(&dp))?,
                gt: put(format!("{}.depth_gt", spec.id), binary::encode_grid(&dg))?,
            });
            let (c, l, r) = views(&mut rng, spec.defect == Defect::Views);
            rec.view_files = Some(ViewFiles {
                center: put(format!("{}.view_c", spec.id), binary::encode_grid(&c))?,
                left: put(format!("{}.view_l", spec.id), binary::encode_grid(&l))?,
                right: put(format!("{}.view_r", spec.id), binary::encode_grid(&r))?,
            });
            let (frames, prompts) = embeddings(&mut rng, spec.defect == Defect::Prompt);
            rec.embed_file = Some(put(format!("{}.embed", spec.id), binary::encode_embeddings(&frames))?);
            rec.prompt_file = Some(put(format!("{}.prompt", spec.id), binary::encode_embeddings(&prompts))?);
        }
        rec.refresh_checksums(dir)?;
        manifest.records.push(rec);
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&manifest, &path)?;
    Ok(path)
}

/// Per-slot draw probability of every id under `table` and mixing ratio
/// `alpha`.
fn slot_probabilities(table: &WeightTable, alpha: f64) -> BTreeMap<&str, f64> {
    table
        .entries
        .iter()
        .map(|e| {
            let share = match e.stratum {
                Stratum::Generated => alpha,
                Stratum::Real => 1.0 - alpha,
                Stratum::Global => 1.0,
            };
            (e.id.as_str(), share * e.weight)
        })
        .collect()
}

/// Generates the cohort, then runs filter, score and sample into `out_dir`
/// and checks the adaptive draw frequencies against the weight table.
pub fn run_demo(seed: u64, out_dir: &Path) -> Result<DemoOutcome> {
    let cfg = demo_config(seed);
    let manifest_path = write_cohort(seed, out_dir)?;
    let filter = run_filter(&manifest_path, &cfg, Some(out_dir))?;
    let scores_path = out_dir.join("scores.jsonl");
    run_score(&filter.manifest_path, &cfg, &scores_path)?;
    let sample = run_sample(
        &filter.manifest_path,
        Some(&scores_path),
        &cfg,
        0..cfg.sampler.total_steps,
        out_dir,
        PlanFormat::Jsonl,
    )?;

    let adaptive_path = sample
        .adaptive_path
        .as_ref()
        .ok_or_else(|| PipelineError::Check("demo schedule never reached the adaptive phase".into()))?;
    let adaptive = WeightTable::from_jsonl(&read_text(adaptive_path)?)?;
    let probs = slot_probabilities(&adaptive, cfg.sampler.alpha);
    let (_, records) = parse_plan_jsonl(&read_text(&sample.plan_path)?)?;
    let switch = cfg.sampler.switch_step();
    let mut counts: BTreeMap<&str, u64> = probs.keys().map(|&id| (id, 0)).collect();
    for r in &records {
        if let PlanRecord::Draw { step, id, .. } = r {
            if *step >= switch {
                *counts
                    .get_mut(id.as_str())
                    .ok_or_else(|| PipelineError::Check(format!("plan draws unknown id {id}")))? += 1;
            }
        }
    }
    let filtered_draws: u64 = probs.iter().filter(|(_, &p)| p == 0.0).map(|(id, _)| counts[id]).sum();
    let mean = |hard: bool, of: &dyn Fn(&str) -> f64| {
        let ids: Vec<&str> = probs
            .iter()
            .filter(|(id, &p)| p > 0.0 && id.contains("_hard_") == hard)
            .map(|(&id, _)| id)
            .collect();
        ids.iter().map(|id| of(id)).sum::<f64>() / ids.len() as f64
    };
    let measured_ratio = mean(true, &|id| counts[id] as f64) / mean(false, &|id| counts[id] as f64);
    let expected_ratio = mean(true, &|id| probs[id]) / mean(false, &|id| probs[id]);
    let outcome = DemoOutcome {
        filter,
        scores_path,
        sample,
        measured_ratio,
        expected_ratio,
        filtered_draws,
    };
    if filtered_draws > 0 {
        return Err(PipelineError::Check(format!(
            "{filtered_draws} draws of filtered samples"
        )));
    }
    if ((measured_ratio / expected_ratio) - 1.0).abs() > RATIO_TOLERANCE {
        return Err(PipelineError::Check(format!(
            "hard/easy draw ratio {measured_ratio:.4} deviates from expected {expected_ratio:.4} by more than {:.0}%",
            RATIO_TOLERANCE * 100.0
        )));
    }
    Ok(outcome)
}
