//! Two-phase batch sampler over a mixed real/generated cohort.
//!
//! Before the switch step every retained sample in a stratum is equally
//! likely. From the switch step on, a sample with unified score `s` gets
//! weight proportional to `gamma + lambda * (1 - s)`, so poorly handled
//! samples are drawn more often while every retained sample keeps at least
//! `gamma`-proportional support. In per-source mode each slot first picks the
//! generated stratum with probability `alpha` (real otherwise) and then draws
//! within that stratum.

mod plan;
mod rng;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checksum::{parse_hex, to_hex, Fnv1a};
use crate::data::{SampleRecord, Source};

pub use plan::{
    decode_binary_plan, encode_binary_record, parse_plan_jsonl, phase_schedule, EpochPlan, PlanEvent, PlanFormat,
    PlanHeader, PlanRecord, PlanWriter, BATCH_MAGIC,
};
pub use rng::SlotRng;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("sample {0} has no score; adaptive weights need one for every retained sample")]
    MissingScore(String),
    #[error("sample {id} has score {score} outside [0, 1]")]
    ScoreOutOfRange { id: String, score: f64 },
    #[error("stratum {0} has no retained samples")]
    EmptyStratum(Stratum),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("no {0} weight table supplied for a step range that needs one")]
    MissingTable(Phase),
    #[error("weight tables disagree: {0}")]
    TableMismatch(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("truncated plan stream at byte {offset}")]
    TruncatedStream { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataMode {
    #[default]
    PerSource,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Uniform,
    Adaptive,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Uniform => "uniform",
            Phase::Adaptive => "adaptive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Real,
    Generated,
    Global,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Real => "real",
            Stratum::Generated => "generated",
            Stratum::Global => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Probability that a slot draws from the generated stratum.
    pub alpha: f64,
    pub seed: u64,
    pub total_steps: u64,
    /// First adaptive step; half of `total_steps` when unset.
    pub phase_switch_step: Option<u64>,
    pub batch_size: usize,
    pub strata_mode: StrataMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lambda: 1.0,
            alpha: 0.5,
            seed: 0,
            total_steps: 10_000,
            phase_switch_step: None,
            batch_size: 64,
            strata_mode: StrataMode::PerSource,
        }
    }
}

impl SamplerConfig {
    pub fn switch_step(&self) -> u64 {
        self.phase_switch_step.unwrap_or(self.total_steps / 2)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::InvalidConfig(m));
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.switch_step() > self.total_steps {
            return bad(format!(
                "phase_switch_step {} exceeds total_steps {}",
                self.switch_step(),
                self.total_steps
            ));
        }
        Ok(())
    }

    fn needs(&self, stratum: Stratum) -> bool {
        match stratum {
            Stratum::Generated => self.alpha > 0.0,
            Stratum::Real => self.alpha < 1.0,
            Stratum::Global => true,
        }
    }
}

/// Fingerprint of the cohort: FNV-1a over `id\tsource\n` lines sorted by id.
pub fn cohort_checksum<'a>(samples: impl IntoIterator<Item = (&'a str, Source)>) -> u64 {
    let mut pairs: Vec<_> = samples.into_iter().collect();
    pairs.sort();
    let mut h = Fnv1a::new();
    for (id, source) in pairs {
        h.update(id.as_bytes());
        h.update(b"\t");
        h.update(source.as_str().as_bytes());
        h.update(b"\n");
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub id: String,
    pub stratum: Stratum,
    pub weight: f64,
}

/// Sampling probabilities for one phase, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub entries: Vec<WeightEntry>,
    pub phase: Phase,
    pub config: SamplerConfig,
    pub cohort_checksum: u64,
}

impl WeightTable {
    pub fn weight(&self, id: &str) -> Option<f64> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].weight)
    }

    pub fn stratum_total(&self, stratum: Stratum) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.stratum == stratum)
            .map(|e| e.weight)
            .sum()
    }

    /// Header line plus one `{id, weight, phase, stratum}` line per sample.
    pub fn to_jsonl(&self) -> String {
        let header = TableHeader {
            cohort_checksum: to_hex(self.cohort_checksum),
            phase: self.phase,
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            let line = TableLine {
                id: e.id.clone(),
                weight: e.weight,
                phase: self.phase,
                stratum: e.stratum,
            };
            out.push_str(&serde_json::to_string(&line).expect("line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, SamplerError> {
        let malformed = |line: usize, reason: String| SamplerError::Malformed { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hi, hl) = lines.next().ok_or_else(|| malformed(1, "empty weight table".into()))?;
        let header: TableHeader = serde_json::from_str(hl).map_err(|e| malformed(hi + 1, e.to_string()))?;
        let cohort_checksum =
            parse_hex(&header.cohort_checksum).ok_or_else(|| malformed(hi + 1, "bad cohort checksum".into()))?;
        let mut entries = Vec::new();
        for (i, l) in lines {
            let line: TableLine = serde_json::from_str(l).map_err(|e| malformed(i + 1, e.to_string()))?;
            if line.phase != header.phase {
                return Err(malformed(i + 1, "phase differs from header".into()));
            }
            entries.push(WeightEntry {
                id: line.id,
                stratum: line.stratum,
                weight: line.weight,
            });
        }
        if entries.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(malformed(0, "entries must be sorted by unique id".into()));
        }
        Ok(Self {
            entries,
            phase: header.phase,
            config: header.config,
            cohort_checksum,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableHeader {
    cohort_checksum: String,
    phase: Phase,
    config: SamplerConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableLine {
    id: String,
    weight: f64,
    phase: Phase,
    stratum: Stratum,
}

/// Computes the sampling table for `phase`. Filtered samples get exactly 0;
/// retained samples in each active stratum sum to 1.
pub fn compute_weights(
    samples: &[SampleRecord],
    cfg: &SamplerConfig,
    phase: Phase,
) -> Result<WeightTable, SamplerError> {
    cfg.validate()?;
    let stratum_of = |s: &SampleRecord| match cfg.strata_mode {
        StrataMode::Global => Stratum::Global,
        StrataMode::PerSource => match s.source {
            Source::Real => Stratum::Real,
            Source::Generated => Stratum::Generated,
        },
    };
    let mut raw = Vec::with_capacity(samples.len());
    for s in samples {
        let w = if !s.is_retained() {
            0.0
        } else {
            match phase {
                Phase::Uniform => 1.0,
                Phase::Adaptive => {
                    let score = s.score.ok_or_else(|| SamplerError::MissingScore(s.id.clone()))?;
                    if !(0.0..=1.0).contains(&score) {
                        return Err(SamplerError::ScoreOutOfRange {
                            id: s.id.clone(),
                            score,
                        });
                    }
                    cfg.gamma + cfg.lambda * (1.0 - score)
                }
            }
        };
        raw.push((s.id.clone(), stratum_of(s), w));
    }
    let mut totals: BTreeMap<Stratum, f64> = BTreeMap::new();
    for (_, st, w) in &raw {
        *totals.entry(*st).or_default() += w;
    }
    let active: &[Stratum] = match cfg.strata_mode {
        StrataMode::Global => &[Stratum::Global],
        StrataMode::PerSource => &[Stratum::Real, Stratum::Generated],
    };
    for st in active {
        if cfg.needs(*st) && totals.get(st).copied().unwrap_or(0.0) <= 0.0 {
            return Err(SamplerError::EmptyStratum(*st));
        }
    }
    let mut entries: Vec<WeightEntry> = raw
        .into_iter()
        .map(|(id, stratum, w)| {
            let total = totals[&stratum];
            WeightEntry {
                id,
                stratum,
                weight: if w > 0.0 { w / total } else { 0.0 },
            }
        })
        .collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(SamplerError::TableMismatch(format!("duplicate id {}", w[0].id)));
    }
    Ok(WeightTable {
        entries,
        phase,
        config: cfg.clone(),
        cohort_checksum: cohort_checksum(samples.iter().map(|s| (s.id.as_str(), s.source))),
    })
}

/// Inverse-CDF lookup over the positive-weight entries of one stratum.
#[derive(Debug, Clone)]
struct Cdf {
    ids: Vec<String>,
    cumulative: Vec<f64>,
}

impl Cdf {
    fn build<'a>(entries: impl Iterator<Item = &'a WeightEntry>) -> Option<Self> {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for e in entries.filter(|e| e.weight > 0.0) {
            acc += e.weight;
            ids.push(e.id.clone());
            cumulative.push(acc);
        }
        (!ids.is_empty()).then_some(Self { ids, cumulative })
    }

    fn pick(&self, u: f64) -> &str {
        let target = u * self.cumulative[self.cumulative.len() - 1];
        let idx = self.cumulative.partition_point(|&c| c <= target);
        &self.ids[idx.min(self.ids.len() - 1)]
    }
}

#[derive(Debug, Clone)]
enum Strata {
    Global(Cdf),
    PerSource { real: Option<Cdf>, generated: Option<Cdf> },
}

/// Draws batches from one weight table. Slot `k` of step `t` depends only on
/// `(seed, t, k)`, so batches can be produced in any order or in parallel.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: SlotRng,
    alpha: f64,
    batch_size: usize,
    strata: Strata,
}

impl BatchSampler {
    pub fn new(table: &WeightTable, cfg: &SamplerConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let of = |st: Stratum| Cdf::build(table.entries.iter().filter(move |e| e.stratum == st));
        let strata = match cfg.strata_mode {
            StrataMode::Global => {
                Strata::Global(of(Stratum::Global).ok_or(SamplerError::EmptyStratum(Stratum::Global))?)
            }
            StrataMode::PerSource => {
                let (real, generated) = (of(Stratum::Real), of(Stratum::Generated));
                if generated.is_none() && cfg.needs(Stratum::Generated) {
                    return Err(SamplerError::EmptyStratum(Stratum::Generated));
                }
                if real.is_none() && cfg.needs(Stratum::Real) {
                    return Err(SamplerError::EmptyStratum(Stratum::Real));
                }
                Strata::PerSource { real, generated }
            }
        };
        Ok(Self {
            rng: SlotRng::new(cfg.seed),
            alpha: cfg.alpha,
            batch_size: cfg.batch_size,
            strata,
        })
    }

    pub fn draw_slot(&self, step: u64, slot: u32) -> &str {
        let [u_stratum, u_pick] = self.rng.uniforms(step, slot);
        let cdf = match &self.strata {
            Strata::Global(g) => g,
            Strata::PerSource { real, generated } => {
                let chosen = if u_stratum < self.alpha { generated } else { real };
                chosen.as_ref().expect("stratum presence checked at construction")
            }
        };
        cdf.pick(u_pick)
    }

    /// `batch_size` ids for `step`, drawn with replacement.
    pub fn draw_batch(&self, step: u64) -> Vec<String> {
        (0..self.batch_size as u32)
            .map(|slot| self.draw_slot(step, slot).to_string())
            .collect()
    }
}
