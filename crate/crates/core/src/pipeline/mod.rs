//! End-to-end commands: filter, score, sample, eval, exec and the synthetic
//! demo. Every command reads its inputs, writes new files and never
//! modifies an input in place.

mod demo;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::behavior::{self, format_percent, BehaviorError, RuleBook};
use crate::config::{ConfigError, PipelineConfig};
use crate::data::binary::Embeddings;
use crate::data::manifest::{load_manifest, write_manifest, DatasetManifest, ManifestRecord, PromptTag};
use crate::data::{DataError, SampleRecord, Source};
use crate::metrics::{
    execution_report, format_score_line, parse_score_file, sample_kinematics, sample_mse, unified_scores, MetricError,
    RawScores, ScoreRecord,
};
use crate::quality::{
    clip_alignment, depth_metrics, match_report, DepthGrid, PromptEmbeddings, QualityError, QualityReport, Verdict,
};
use crate::sampler::{
    compute_weights, EpochPlan, Phase, PlanFormat, PlanHeader, PlanWriter, SamplerError, WeightTable,
};

pub use demo::{demo_config, run_demo, write_cohort, DemoOutcome, DEMO_SAMPLES};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("sample {id}: {source}")]
    Quality { id: String, source: QualityError },
    #[error(transparent)]
    Filter(#[from] QualityError),
    #[error("sample {id}: {source}")]
    Metric { id: String, source: MetricError },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("check failed: {0}")]
    Check(String),
}

impl PipelineError {
    /// Process exit status for this error. Usage errors are reported by the
    /// argument parser before any command runs.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Parses `A..B` into a half-open step range.
pub fn parse_steps(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end {b:?}: {e}"))?;
    if a > b {
        return Err(format!("range start {a} is after end {b}"));
    }
    Ok(a..b)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn prompt_embeddings(id: &str, prompts: &Embeddings, tags: &[PromptTag]) -> Result<PromptEmbeddings> {
    let bad = |reason: String| PipelineError::Quality {
        id: id.to_string(),
        source: QualityError::ShapeMismatch(reason),
    };
    if prompts.vectors.len() != tags.len() {
        return Err(bad(format!(
            "{} prompt vectors but {} prompt tags",
            prompts.vectors.len(),
            tags.len()
        )));
    }
    let find = |tag: PromptTag| {
        tags.iter()
            .position(|&t| t == tag)
            .map(|i| prompts.vectors[i].clone())
            .ok_or_else(|| bad(format!("prompt has no {tag:?} component")))
    };
    Ok(PromptEmbeddings {
        foreground: find(PromptTag::Foreground)?,
        background: find(PromptTag::Background)?,
        lighting: find(PromptTag::Lighting)?,
    })
}

/// Computes every quality measurement that the record has inputs for.
pub fn measure_quality(
    manifest: &DatasetManifest,
    rec: &ManifestRecord,
    cfg: &PipelineConfig,
) -> Result<QualityReport> {
    let in_sample = |source| PipelineError::Quality {
        id: rec.id.clone(),
        source,
    };
    let mut report = QualityReport::default();
    if let Some((pred, gt)) = manifest.load_depth(rec)? {
        let pred = DepthGrid::new(pred).map_err(in_sample)?;
        let gt = DepthGrid::new(gt).map_err(in_sample)?;
        report.depth = Some(depth_metrics(&pred, &gt).map_err(in_sample)?);
    }
    if let Some((center, left, right)) = manifest.load_views(rec)? {
        let matcher = cfg.matcher.build();
        report.matches = Some(match_report(&center, &left, &right, &matcher).map_err(in_sample)?);
    }
    if let Some((frames, prompts, tags)) = manifest.load_embeddings(rec)? {
        let prompt = prompt_embeddings(&rec.id, &prompts, &tags)?;
        report.alignment = Some(clip_alignment(&frames.vectors, &prompt).map_err(in_sample)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub generated: usize,
    pub retained: usize,
    pub report_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl FilterOutcome {
    pub fn summary(&self) -> String {
        format!("retained {}/{} generated samples", self.retained, self.generated)
    }
}

/// Measures and screens every generated sample. Writes the quality report
/// and, beside the input, a copy of the manifest carrying verdicts and
/// zeroed weights.
pub fn run_filter(manifest_path: &Path, cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<FilterOutcome> {
    cfg.validate()?;
    let mut manifest = load_manifest(manifest_path)?;
    let reports: Vec<(usize, QualityReport)> = manifest
        .records
        .par_iter()
        .enumerate()
        .filter(|(_, r)| r.source == Source::Generated)
        .map(|(i, r)| {
            let mut report = measure_quality(&manifest, r, cfg)?;
            let failed = cfg.filter.failures(&r.id, &report)?;
            report.verdict = Some(if failed.is_empty() {
                Verdict::Pass
            } else {
                Verdict::Fail(failed)
            });
            Ok((i, report))
        })
        .collect::<Result<_>>()?;

    let mut lines: Vec<(String, String)> = Vec::with_capacity(reports.len());
    let mut retained = 0;
    for (i, report) in &reports {
        let rec = &mut manifest.records[*i];
        let verdict = report.verdict.clone().expect("verdict set above");
        if verdict == Verdict::Pass {
            retained += 1;
        } else {
            rec.weight = Some(0.0);
        }
        rec.verdict = Some(verdict.to_string());
        lines.push((rec.id.clone(), report.to_line(&rec.id)));
    }
    lines.sort();

    let report_path = match out_dir {
        Some(dir) => dir.join("quality_report.jsonl"),
        None => sibling(manifest_path, "quality.jsonl"),
    };
    let filtered_path = sibling(manifest_path, "filtered.jsonl");
    let mut text = String::new();
    for (_, l) in &lines {
        text.push_str(l);
        text.push('\n');
    }
    write_text(&report_path, &text)?;
    write_manifest(&manifest, &filtered_path)?;
    Ok(FilterOutcome {
        generated: reports.len(),
        retained,
        report_path,
        manifest_path: filtered_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub records: Vec<ScoreRecord>,
    /// Retained samples that had no predictions and therefore no score.
    pub unscored: Vec<String>,
    pub path: PathBuf,
}

/// Raw channels for one sample; the MSE channel is absent without
/// predictions.
pub fn raw_channels(sample: &SampleRecord, cfg: &PipelineConfig) -> std::result::Result<ScoreRecord, MetricError> {
    let m = &cfg.metrics;
    let has_preds = !sample.prediction_windows.is_empty();
    let r_mse = if has_preds {
        Some(sample_mse(&sample.prediction_windows, m.window)?)
    } else {
        None
    };
    let kin = match sample_kinematics(&sample.trajectory, &sample.prediction_windows, m.smooth_scope, m.window) {
        Ok(k) => Some(k),
        Err(MetricError::NoPredictions) => None,
        Err(e) => return Err(e),
    };
    Ok(ScoreRecord {
        id: sample.id.clone(),
        r_mse,
        r_smooth: kin.map(|k| k.0),
        r_limit: kin.map(|k| k.1),
        normalized: None,
    })
}

/// Scores loaded samples. Normalization runs over retained samples that
/// have every raw channel; output is sorted by id.
pub fn score_samples(samples: &[SampleRecord], cfg: &PipelineConfig) -> Result<(Vec<ScoreRecord>, Vec<String>)> {
    let mut records: Vec<ScoreRecord> = samples
        .par_iter()
        .map(|s| {
            raw_channels(s, cfg).map_err(|source| PipelineError::Metric {
                id: s.id.clone(),
                source,
            })
        })
        .collect::<Result<_>>()?;
    let retained: Vec<bool> = samples.iter().map(SampleRecord::is_retained).collect();
    let cohort: Vec<usize> = (0..records.len())
        .filter(|&i| retained[i] && records[i].r_mse.is_some() && records[i].r_smooth.is_some())
        .collect();
    let unscored: Vec<String> = (0..records.len())
        .filter(|&i| retained[i] && !cohort.contains(&i))
        .map(|i| records[i].id.clone())
        .collect();
    if !cohort.is_empty() {
        let raw: Vec<RawScores> = cohort
            .iter()
            .map(|&i| RawScores {
                mse: records[i].r_mse.expect("cohort member"),
                smooth: records[i].r_smooth.expect("cohort member"),
                limit: records[i].r_limit.expect("cohort member"),
            })
            .collect();
        let normalized = unified_scores(&raw).map_err(|source| PipelineError::Metric {
            id: "<cohort>".into(),
            source,
        })?;
        for (&i, n) in cohort.iter().zip(normalized) {
            records[i].normalized = Some(n);
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((records, unscored))
}

pub fn format_score_file(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format_score_line(r));
        out.push('\n');
    }
    out
}

pub fn run_score(manifest_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<ScoreOutcome> {
    cfg.validate()?;
    let manifest = load_manifest(manifest_path)?;
    let samples = manifest.load_samples()?;
    let (records, unscored) = score_samples(&samples, cfg)?;
    for id in &unscored {
        log::warn!("sample {id} has no predictions; it gets no score");
    }
    write_text(out, &format_score_file(&records))?;
    Ok(ScoreOutcome {
        records,
        unscored,
        path: out.to_path_buf(),
    })
}

/// Attaches `s` from a score file to each sample by id.
pub fn attach_scores(samples: &mut [SampleRecord], scores: &[ScoreRecord]) {
    let by_id: BTreeMap<&str, Option<f64>> = scores.iter().map(|r| (r.id.as_str(), r.score())).collect();
    for s in samples {
        s.score = by_id.get(s.id.as_str()).copied().flatten();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub plan_path: PathBuf,
    pub uniform_path: PathBuf,
    pub adaptive_path: Option<PathBuf>,
    pub refresh_steps: Vec<u64>,
    pub draws: u64,
}

/// The uniform table, and the adaptive table when `steps` reaches the
/// adaptive phase.
pub fn phase_tables(
    samples: &[SampleRecord],
    cfg: &PipelineConfig,
    steps: &Range<u64>,
) -> Result<(WeightTable, Option<WeightTable>)> {
    let s = &cfg.sampler;
    let uniform = compute_weights(samples, s, Phase::Uniform)?;
    let adaptive = if steps.end > s.switch_step() {
        Some(compute_weights(samples, s, Phase::Adaptive)?)
    } else {
        None
    };
    Ok((uniform, adaptive))
}

/// Writes the weight tables and the batch plan for `steps` into `out_dir`.
pub fn write_plan(
    samples: &[SampleRecord],
    cfg: &PipelineConfig,
    steps: Range<u64>,
    out_dir: &Path,
    format: PlanFormat,
) -> Result<SampleOutcome> {
    let (uniform, adaptive) = phase_tables(samples, cfg, &steps)?;
    let uniform_path = out_dir.join("weights.uniform.jsonl");
    write_text(&uniform_path, &uniform.to_jsonl())?;
    let adaptive_path = match &adaptive {
        Some(t) => {
            let p = out_dir.join("weights.adaptive.jsonl");
            write_text(&p, &t.to_jsonl())?;
            Some(p)
        }
        None => None,
    };
    let plan = EpochPlan::new(&cfg.sampler, Some(&uniform), adaptive.as_ref(), steps.clone())?;
    let plan_path = out_dir.join(match format {
        PlanFormat::Jsonl => "plan.jsonl",
        PlanFormat::Binary => "plan.embt",
    });
    let file = fs::File::create(&plan_path).map_err(io_err(&plan_path))?;
    let header = PlanHeader::new(&cfg.sampler, uniform.cohort_checksum, &steps);
    let mut writer = PlanWriter::new(BufWriter::new(file), format, &header).map_err(io_err(&plan_path))?;
    let mut refresh_steps = Vec::new();
    let mut draws = 0;
    for event in plan {
        match &event {
            crate::sampler::PlanEvent::Refresh { step } => refresh_steps.push(*step),
            crate::sampler::PlanEvent::Batch { ids, .. } => draws += ids.len() as u64,
        }
        writer.write_event(&event).map_err(io_err(&plan_path))?;
    }
    writer.finish().map_err(io_err(&plan_path))?;
    Ok(SampleOutcome {
        plan_path,
        uniform_path,
        adaptive_path,
        refresh_steps,
        draws,
    })
}

pub fn run_sample(
    manifest_path: &Path,
    scores_path: Option<&Path>,
    cfg: &PipelineConfig,
    steps: Range<u64>,
    out_dir: &Path,
    format: PlanFormat,
) -> Result<SampleOutcome> {
    cfg.validate()?;
    let manifest = load_manifest(manifest_path)?;
    let mut samples = manifest.load_samples()?;
    if let Some(p) = scores_path {
        let scores = parse_score_file(&read_text(p)?)?;
        attach_scores(&mut samples, &scores);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_plan(&samples, cfg, steps, out_dir, format)
}

/// Behavior-score summary per task.
pub fn run_eval(logs_path: &Path, rules_path: Option<&Path>) -> Result<String> {
    let book = match rules_path {
        Some(p) => RuleBook::from_toml(&read_text(p)?)?,
        None => RuleBook::golden(),
    };
    let logs = behavior::parse_episode_logs(&read_text(logs_path)?)?;
    let results = behavior::evaluate(&logs, &book)?;
    let mut out = format!("{:<16} {:>8} {:>6} {:>7}\n", "Task", "Episodes", "Score", "SR");
    for (task, a) in &results {
        writeln!(
            out,
            "{:<16} {:>8} {:>6.2} {:>7}",
            task,
            a.episodes,
            a.mean_score,
            format_percent(a.success_rate)
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecRow {
    /// Mean episode duration in seconds.
    pub time: f64,
    /// Mean absolute angular acceleration in deg/s².
    pub smooth: f64,
    /// Mean number of frames with a joint beyond its limits.
    pub jol: f64,
}

/// Execution statistics per task, in task-name order.
pub fn execution_table(samples: &[SampleRecord]) -> BTreeMap<String, ExecRow> {
    let mut acc: BTreeMap<&str, (f64, f64, usize, f64, usize)> = BTreeMap::new();
    for s in samples {
        let r = execution_report(&s.trajectory);
        let e = acc.entry(s.task.as_str()).or_default();
        e.0 += r.duration;
        if let Some(a) = r.mean_ang_accel {
            e.1 += a;
            e.2 += 1;
        }
        e.3 += r.overlimit_frames as f64;
        e.4 += 1;
    }
    acc.into_iter()
        .map(|(task, (time, accel, n_accel, jol, n))| {
            (
                task.to_string(),
                ExecRow {
                    time: time / n as f64,
                    smooth: if n_accel > 0 { accel / n_accel as f64 } else { 0.0 },
                    jol: jol / n as f64,
                },
            )
        })
        .collect()
}

pub fn format_execution_table(rows: &BTreeMap<String, ExecRow>) -> String {
    let mut out = format!("{:<16} {:>10} {:>12} {:>8}\n", "Task", "Time", "Smth", "JOL");
    let mut line = |name: &str, r: &ExecRow| {
        writeln!(out, "{:<16} {:>10.3} {:>12.3} {:>8.2}", name, r.time, r.smooth, r.jol)
            .expect("writing to a String cannot fail");
    };
    for (task, r) in rows {
        line(task, r);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = ExecRow {
            time: rows.values().map(|r| r.time).sum::<f64>() / n,
            smooth: rows.values().map(|r| r.smooth).sum::<f64>() / n,
            jol: rows.values().map(|r| r.jol).sum::<f64>() / n,
        };
        line("Average", &avg);
    }
    out
}

pub fn run_exec(manifest_path: &Path, task: Option<&str>) -> Result<String> {
    let manifest = load_manifest(manifest_path)?;
    let mut samples = manifest.load_samples()?;
    if let Some(t) = task {
        samples.retain(|s| s.task == t);
    }
    Ok(format_execution_table(&execution_table(&samples)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{JointLimit, JointTrajectory, Matrix};

    #[test]
    fn steps_parse() {
        assert_eq!(parse_steps("0..10"), Ok(0..10));
        assert_eq!(parse_steps(" 5 .. 7"), Ok(5..7));
        assert!(parse_steps("7..5").is_err());
        assert!(parse_steps("7").is_err());
        assert!(parse_steps("a..5").is_err());
    }

    fn constant(task: &str, frames: usize) -> SampleRecord {
        let t = JointTrajectory::new(
            Matrix::new(frames, 2, vec![1.0; frames * 2]).unwrap(),
            0.5,
            vec![JointLimit::new(-10.0, 10.0); 2],
        )
        .unwrap();
        SampleRecord::new(format!("{task}_{frames}"), Source::Real, task, t)
    }

    #[test]
    fn constant_trajectory_exec_row() {
        let rows = execution_table(&[constant("fold_cloth", 5), constant("fold_cloth", 9)]);
        assert_eq!(
            rows["fold_cloth"],
            ExecRow {
                time: 3.0,
                smooth: 0.0,
                jol: 0.0
            }
        );
        let table = format_execution_table(&rows);
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Task", "Time", "Smth", "JOL"]);
        assert!(table.lines().last().unwrap().starts_with("Average"));
    }

    #[test]
    fn score_cohort_excludes_filtered_and_unpredicted() {
        let mut a = constant("t", 5);
        a.id = "a".into();
        let mut b = constant("t", 6);
        b.id = "b".into();
        b.weight = Some(0.0);
        let (records, unscored) = score_samples(&[b, a], &PipelineConfig::default()).unwrap();
        assert_eq!(records[0].id, "a");
        assert!(records.iter().all(|r| r.normalized.is_none() && r.r_mse.is_none()));
        assert_eq!(unscored, vec!["a".to_string()]);
    }
}
