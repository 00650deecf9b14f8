//! Phase schedule and the batch-plan stream handed to training loops.
//!
//! Text form: a header line followed by `{step, slot, id}` lines and a
//! `{step, refresh: true}` marker immediately before the first adaptive
//! batch. Binary form: length-prefixed frames, each `u32` payload length then
//! `EMBT`, `u64` step, `u32` slot and the id bytes. The header frame uses
//! step `u64::MAX`/slot `u32::MAX` with the JSON header as id bytes; a
//! refresh marker uses slot `u32::MAX` and an empty id.

use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{BatchSampler, Phase, SamplerConfig, SamplerError, WeightTable};
use crate::checksum::to_hex;

pub const BATCH_MAGIC: &[u8; 4] = b"EMBT";
const MARKER_SLOT: u32 = u32::MAX;
const HEADER_STEP: u64 = u64::MAX;

/// `Uniform` strictly before the switch step, `Adaptive` from it on.
pub fn phase_schedule(step: u64, cfg: &SamplerConfig) -> Result<Phase, SamplerError> {
    if step >= cfg.total_steps {
        return Err(SamplerError::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    Ok(if step < cfg.switch_step() {
        Phase::Uniform
    } else {
        Phase::Adaptive
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanEvent {
    /// Scores must be refreshed before this step's batch is consumed.
    Refresh {
        step: u64,
    },
    Batch {
        step: u64,
        ids: Vec<String>,
    },
}

/// Lazily generated sequence of batches over a step range.
#[derive(Debug)]
pub struct EpochPlan {
    uniform: Option<BatchSampler>,
    adaptive: Option<BatchSampler>,
    cfg: SamplerConfig,
    next: u64,
    end: u64,
    marker_sent: bool,
}

impl EpochPlan {
    pub fn new(
        cfg: &SamplerConfig,
        uniform: Option<&WeightTable>,
        adaptive: Option<&WeightTable>,
        steps: Range<u64>,
    ) -> Result<Self, SamplerError> {
        cfg.validate()?;
        if steps.start > steps.end || steps.end > cfg.total_steps {
            return Err(SamplerError::StepOutOfRange {
                step: steps.end.max(steps.start),
                total: cfg.total_steps,
            });
        }
        let switch = cfg.switch_step();
        let needs_uniform = steps.start < steps.end && steps.start < switch;
        let needs_adaptive = steps.start < steps.end && steps.end > switch;
        let prepare =
            |table: Option<&WeightTable>, phase: Phase, needed: bool| -> Result<Option<BatchSampler>, SamplerError> {
                match table {
                    None if needed => Err(SamplerError::MissingTable(phase)),
                    None => Ok(None),
                    Some(t) if t.phase != phase => Err(SamplerError::TableMismatch(format!(
                        "expected a {phase} table, got {}",
                        t.phase
                    ))),
                    Some(t) => BatchSampler::new(t, cfg).map(Some),
                }
            };
        if let (Some(u), Some(a)) = (uniform, adaptive) {
            if u.cohort_checksum != a.cohort_checksum {
                return Err(SamplerError::TableMismatch(
                    "tables were computed over different cohorts".into(),
                ));
            }
        }
        Ok(Self {
            uniform: prepare(uniform, Phase::Uniform, needs_uniform)?,
            adaptive: prepare(adaptive, Phase::Adaptive, needs_adaptive)?,
            cfg: cfg.clone(),
            next: steps.start,
            end: steps.end,
            marker_sent: false,
        })
    }
}

impl Iterator for EpochPlan {
    type Item = PlanEvent;

    fn next(&mut self) -> Option<PlanEvent> {
        if self.next >= self.end {
            return None;
        }
        let step = self.next;
        if step == self.cfg.switch_step() && !self.marker_sent {
            self.marker_sent = true;
            return Some(PlanEvent::Refresh { step });
        }
        let sampler = match phase_schedule(step, &self.cfg).expect("range checked at construction") {
            Phase::Uniform => self.uniform.as_ref(),
            Phase::Adaptive => self.adaptive.as_ref(),
        }
        .expect("tables checked at construction");
        self.next += 1;
        Some(PlanEvent::Batch {
            step,
            ids: sampler.draw_batch(step),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanHeader {
    pub cohort_checksum: String,
    pub seed: u64,
    pub batch_size: usize,
    pub start: u64,
    pub end: u64,
}

impl PlanHeader {
    pub fn new(cfg: &SamplerConfig, cohort_checksum: u64, steps: &Range<u64>) -> Self {
        Self {
            cohort_checksum: to_hex(cohort_checksum),
            seed: cfg.seed,
            batch_size: cfg.batch_size,
            start: steps.start,
            end: steps.end,
        }
    }
}

/// Flattened plan entry, one per text line or binary frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanRecord {
    Draw { step: u64, slot: u32, id: String },
    Refresh { step: u64 },
}

impl PlanEvent {
    pub fn records(&self) -> Vec<PlanRecord> {
        match self {
            PlanEvent::Refresh { step } => vec![PlanRecord::Refresh { step: *step }],
            PlanEvent::Batch { step, ids } => ids
                .iter()
                .enumerate()
                .map(|(slot, id)| PlanRecord::Draw {
                    step: *step,
                    slot: slot as u32,
                    id: id.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrawLine {
    step: u64,
    slot: u32,
    id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefreshLine {
    step: u64,
    refresh: bool,
}

pub fn encode_binary_record(step: u64, slot: u32, id: &[u8]) -> Vec<u8> {
    let payload_len = 4 + 8 + 4 + id.len();
    let mut out = Vec::with_capacity(4 + payload_len);
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    out.extend_from_slice(BATCH_MAGIC);
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&slot.to_le_bytes());
    out.extend_from_slice(id);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanFormat {
    Jsonl,
    Binary,
}

/// Serializes a plan stream to any writer.
pub struct PlanWriter<W: Write> {
    out: W,
    format: PlanFormat,
}

impl<W: Write> PlanWriter<W> {
    pub fn new(mut out: W, format: PlanFormat, header: &PlanHeader) -> io::Result<Self> {
        let json = serde_json::to_string(header).expect("header serializes");
        match format {
            PlanFormat::Jsonl => writeln!(out, "{json}")?,
            PlanFormat::Binary => out.write_all(&encode_binary_record(HEADER_STEP, MARKER_SLOT, json.as_bytes()))?,
        }
        Ok(Self { out, format })
    }

    pub fn write_event(&mut self, event: &PlanEvent) -> io::Result<()> {
        for r in event.records() {
            match (self.format, r) {
                (PlanFormat::Jsonl, PlanRecord::Draw { step, slot, id }) => {
                    let line = serde_json::to_string(&DrawLine { step, slot, id }).expect("line serializes");
                    writeln!(self.out, "{line}")?;
                }
                (PlanFormat::Jsonl, PlanRecord::Refresh { step }) => {
                    let line = serde_json::to_string(&RefreshLine { step, refresh: true }).expect("line serializes");
                    writeln!(self.out, "{line}")?;
                }
                (PlanFormat::Binary, PlanRecord::Draw { step, slot, id }) => {
                    self.out.write_all(&encode_binary_record(step, slot, id.as_bytes()))?;
                }
                (PlanFormat::Binary, PlanRecord::Refresh { step }) => {
                    self.out.write_all(&encode_binary_record(step, MARKER_SLOT, &[]))?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn parse_plan_jsonl(text: &str) -> Result<(PlanHeader, Vec<PlanRecord>), SamplerError> {
    let malformed = |line: usize, reason: String| SamplerError::Malformed { line, reason };
    let mut lines = text.lines().enumerate();
    let (hi, hl) = lines.next().ok_or_else(|| malformed(1, "empty plan".into()))?;
    let header: PlanHeader = serde_json::from_str(hl).map_err(|e| malformed(hi + 1, e.to_string()))?;
    let mut records = Vec::new();
    for (i, l) in lines {
        if l.contains("\"refresh\"") {
            let r: RefreshLine = serde_json::from_str(l).map_err(|e| malformed(i + 1, e.to_string()))?;
            records.push(PlanRecord::Refresh { step: r.step });
        } else {
            let d: DrawLine = serde_json::from_str(l).map_err(|e| malformed(i + 1, e.to_string()))?;
            records.push(PlanRecord::Draw {
                step: d.step,
                slot: d.slot,
                id: d.id,
            });
        }
    }
    Ok((header, records))
}

pub fn decode_binary_plan(bytes: &[u8]) -> Result<(PlanHeader, Vec<PlanRecord>), SamplerError> {
    let mut pos = 0;
    let mut header = None;
    let mut records = Vec::new();
    while pos < bytes.len() {
        let frame_start = pos;
        let truncated = || SamplerError::TruncatedStream { offset: frame_start };
        let len_bytes = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let payload = bytes.get(pos + 4..pos + 4 + len).ok_or_else(truncated)?;
        pos += 4 + len;
        if payload.len() < 16 || &payload[..4] != BATCH_MAGIC {
            return Err(SamplerError::Malformed {
                line: frame_start,
                reason: "bad frame magic".into(),
            });
        }
        let step = u64::from_le_bytes(payload[4..12].try_into().expect("8 bytes"));
        let slot = u32::from_le_bytes(payload[12..16].try_into().expect("4 bytes"));
        let id = std::str::from_utf8(&payload[16..]).map_err(|e| SamplerError::Malformed {
            line: frame_start,
            reason: e.to_string(),
        })?;
        match (step, slot) {
            (HEADER_STEP, MARKER_SLOT) => {
                let h: PlanHeader = serde_json::from_str(id).map_err(|e| SamplerError::Malformed {
                    line: frame_start,
                    reason: e.to_string(),
                })?;
                header = Some(h);
            }
            (step, MARKER_SLOT) => records.push(PlanRecord::Refresh { step }),
            (step, slot) => records.push(PlanRecord::Draw {
                step,
                slot,
                id: id.to_string(),
            }),
        }
    }
    let header = header.ok_or(SamplerError::Malformed {
        line: 0,
        reason: "plan stream has no header frame".into(),
    })?;
    Ok((header, records))
}
