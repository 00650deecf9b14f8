//! Quality scoring of generated episodes and the zero-weight filter.

mod alignment;
mod depth;
mod filter;
mod matcher;

use std::fmt;

use thiserror::Error;

pub use alignment::{clip_alignment, AlignmentReport, PromptEmbeddings};
pub use depth::{depth_metrics, DepthGrid, DepthMetrics};
pub use filter::{apply_filter, FilterConfig};
pub use matcher::{
    match_report, pixel_match_count, Correspondence, ImageGrid, MatchReport, Matcher, MatcherError, PatchMatcher,
};

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-positive or non-finite depth {value} at index {index}")]
    NonPositiveDepth { index: usize, value: f64 },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-length embedding vector")]
    ZeroVector,
    #[error("no frame embeddings")]
    NoEmbeddings,
    #[error("matcher failed on frame {frame}: {source}")]
    MatcherFailure {
        frame: usize,
        #[source]
        source: MatcherError,
    },
    #[error("generated sample {0} has no quality report")]
    MissingQualityReport(String),
    #[error("generated sample {id} lacks {metric} required by the filter")]
    MissingMetric { id: String, metric: &'static str },
    #[error("threshold {0} is not finite")]
    NonFiniteThreshold(&'static str),
}

/// Filter criteria, named as they appear in verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Criterion {
    MatPix,
    SqRel,
    OverallSim,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::MatPix => "mat_pix",
            Criterion::SqRel => "sq_rel",
            Criterion::OverallSim => "overall_sim",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "mat_pix" => Some(Criterion::MatPix),
            "sq_rel" => Some(Criterion::SqRel),
            "overall_sim" => Some(Criterion::OverallSim),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Failed criteria, sorted and deduplicated.
    Fail(Vec<Criterion>),
}

impl Verdict {
    /// Parses `pass` or `fail:<criterion>[,<criterion>...]`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "pass" {
            return Some(Verdict::Pass);
        }
        let rest = s.strip_prefix("fail:")?;
        let mut crit = rest.split(',').map(Criterion::parse).collect::<Option<Vec<_>>>()?;
        crit.sort();
        crit.dedup();
        (!crit.is_empty()).then_some(Verdict::Fail(crit))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => f.write_str("pass"),
            Verdict::Fail(c) => {
                let names: Vec<_> = c.iter().map(|c| c.as_str()).collect();
                write!(f, "fail:{}", names.join(","))
            }
        }
    }
}

/// Everything measured about one generated episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityReport {
    pub depth: Option<DepthMetrics>,
    pub matches: Option<MatchReport>,
    pub alignment: Option<AlignmentReport>,
    pub verdict: Option<Verdict>,
}

impl QualityReport {
    /// One line of the quality report file.
    pub fn to_line(&self, id: &str) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "null".to_string(), crate::metrics::format_sig9);
        let d = self.depth.as_ref();
        let a = self.alignment.as_ref();
        let verdict = self
            .verdict
            .as_ref()
            .map_or_else(|| "null".to_string(), |v| format!("\"{v}\""));
        format!(
            "{{\"id\":{},\"rmse\":{},\"abs_rel\":{},\"sq_rel\":{},\"mat_pix\":{},\"sim_fg\":{},\"sim_bg\":{},\"sim_light\":{},\"overall_sim\":{},\"verdict\":{}}}",
            serde_json::to_string(id).expect("string serializes"),
            num(d.map(|d| d.rmse)),
            num(d.map(|d| d.abs_rel)),
            num(d.map(|d| d.sq_rel)),
            num(self.matches.as_ref().map(|m| m.mat_pix)),
            num(a.map(|a| a.foreground)),
            num(a.map(|a| a.background)),
            num(a.map(|a| a.lighting)),
            num(a.map(|a| a.overall)),
            verdict,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_text() {
        assert_eq!(Verdict::parse("pass"), Some(Verdict::Pass));
        let v = Verdict::parse("fail:sq_rel,mat_pix").unwrap();
        assert_eq!(v, Verdict::Fail(vec![Criterion::MatPix, Criterion::SqRel]));
        assert_eq!(v.to_string(), "fail:mat_pix,sq_rel");
        assert_eq!(Verdict::parse("fail:"), None);
        assert_eq!(Verdict::parse("fail:color"), None);
        assert_eq!(Verdict::parse("ok"), None);
    }

    #[test]
    fn report_line_has_all_columns() {
        let line = QualityReport::default().to_line("g1");
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in [
            "id",
            "rmse",
            "abs_rel",
            "sq_rel",
            "mat_pix",
            "sim_fg",
            "sim_bg",
            "sim_light",
            "overall_sim",
            "verdict",
        ] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
    }
}
