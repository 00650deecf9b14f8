use serde::{Deserialize, Serialize};

use crate::data::{SampleRecord, Source};

use super::{Criterion, QualityError, QualityReport, Verdict};

/// Minimum quality a generated episode needs to stay in training. Absent
/// thresholds are not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub min_mat_pix: Option<f64>,
    #[serde(default)]
    pub max_sq_rel: Option<f64>,
    #[serde(default)]
    pub min_overall_sim: Option<f64>,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), QualityError> {
        for (name, v) in [
            ("min_mat_pix", self.min_mat_pix),
            ("max_sq_rel", self.max_sq_rel),
            ("min_overall_sim", self.min_overall_sim),
        ] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(QualityError::NonFiniteThreshold(name));
            }
        }
        Ok(())
    }

    /// Criteria the report fails under this configuration.
    pub fn failures(&self, id: &str, report: &QualityReport) -> Result<Vec<Criterion>, QualityError> {
        let missing = |metric| QualityError::MissingMetric {
            id: id.to_string(),
            metric,
        };
        let mut failed = Vec::new();
        if let Some(min) = self.min_mat_pix {
            let m = report.matches.as_ref().ok_or_else(|| missing("mat_pix"))?;
            if m.mat_pix < min {
                failed.push(Criterion::MatPix);
            }
        }
        if let Some(max) = self.max_sq_rel {
            let d = report.depth.as_ref().ok_or_else(|| missing("sq_rel"))?;
            if d.sq_rel > max {
                failed.push(Criterion::SqRel);
            }
        }
        if let Some(min) = self.min_overall_sim {
            let a = report.alignment.as_ref().ok_or_else(|| missing("overall_sim"))?;
            if a.overall < min {
                failed.push(Criterion::OverallSim);
            }
        }
        Ok(failed)
    }
}

/// Records a verdict on every generated sample and zeroes the weight of the
/// ones that fail. Real samples are returned unchanged.
pub fn apply_filter(samples: Vec<SampleRecord>, cfg: &FilterConfig) -> Result<Vec<SampleRecord>, QualityError> {
    cfg.validate()?;
    samples
        .into_iter()
        .map(|mut s| {
            if s.source == Source::Real {
                return Ok(s);
            }
            let report = s
                .quality
                .as_mut()
                .ok_or_else(|| QualityError::MissingQualityReport(s.id.clone()))?;
            let failed = cfg.failures(&s.id, report)?;
            if failed.is_empty() {
                report.verdict = Some(Verdict::Pass);
            } else {
                report.verdict = Some(Verdict::Fail(failed));
                s.weight = Some(0.0);
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{JointLimit, JointTrajectory, Matrix};
    use crate::quality::{AlignmentReport, DepthMetrics, MatchReport};

    fn sample(id: &str, source: Source) -> SampleRecord {
        let t = JointTrajectory::new(
            Matrix::new(1, 1, vec![0.0]).unwrap(),
            0.1,
            vec![JointLimit::new(-1.0, 1.0)],
        )
        .unwrap();
        SampleRecord::new(id, source, "fold_cloth", t)
    }

    fn report(mat_pix: f64, sq_rel: f64, overall: f64) -> QualityReport {
        QualityReport {
            depth: Some(DepthMetrics {
                rmse: 0.0,
                abs_rel: 0.0,
                sq_rel,
                scale: 1.0,
            }),
            matches: Some(MatchReport {
                per_frame_counts: vec![],
                mat_pix,
            }),
            alignment: Some(AlignmentReport {
                foreground: overall,
                background: overall,
                lighting: overall,
                overall,
            }),
            verdict: None,
        }
    }

    fn cfg() -> FilterConfig {
        FilterConfig {
            min_mat_pix: Some(100.0),
            max_sq_rel: Some(0.5),
            min_overall_sim: Some(0.2),
        }
    }

    #[test]
    fn real_samples_pass_without_report() {
        let out = apply_filter(vec![sample("r", Source::Real)], &cfg()).unwrap();
        assert_eq!(out[0], sample("r", Source::Real));
        assert_eq!(out[0].verdict(), Some(Verdict::Pass));
    }

    #[test]
    fn low_match_count_is_zeroed() {
        let mut g = sample("g", Source::Generated);
        g.quality = Some(report(10.0, 0.1, 0.9));
        let out = apply_filter(vec![g], &cfg()).unwrap();
        assert_eq!(out[0].weight, Some(0.0));
        assert_eq!(out[0].verdict(), Some(Verdict::Fail(vec![Criterion::MatPix])));
        assert_eq!(out[0].verdict().unwrap().to_string(), "fail:mat_pix");
    }

    #[test]
    fn passing_sample_keeps_weight_unset() {
        let mut g = sample("g", Source::Generated);
        g.quality = Some(report(500.0, 0.1, 0.9));
        let out = apply_filter(vec![g], &cfg()).unwrap();
        assert_eq!(out[0].weight, None);
        assert_eq!(out[0].verdict(), Some(Verdict::Pass));
    }

    #[test]
    fn all_failures_listed() {
        let mut g = sample("g", Source::Generated);
        g.quality = Some(report(0.0, 9.0, 0.0));
        let out = apply_filter(vec![g], &cfg()).unwrap();
        assert_eq!(
            out[0].verdict(),
            Some(Verdict::Fail(vec![
                Criterion::MatPix,
                Criterion::SqRel,
                Criterion::OverallSim
            ]))
        );
    }

    #[test]
    fn absent_thresholds_are_not_enforced() {
        let mut g = sample("g", Source::Generated);
        g.quality = Some(QualityReport::default());
        let out = apply_filter(vec![g], &FilterConfig::default()).unwrap();
        assert_eq!(out[0].verdict(), Some(Verdict::Pass));
    }

    #[test]
    fn missing_report_or_metric_is_an_error() {
        let g = sample("g", Source::Generated);
        assert_eq!(
            apply_filter(vec![g.clone()], &cfg()),
            Err(QualityError::MissingQualityReport("g".into()))
        );
        let mut g = g;
        g.quality = Some(QualityReport::default());
        assert!(matches!(
            apply_filter(vec![g], &cfg()),
            Err(QualityError::MissingMetric { metric: "mat_pix", .. })
        ));
    }

    #[test]
    fn idempotent() {
        let mut a = sample("a", Source::Generated);
        a.quality = Some(report(10.0, 0.9, 0.1));
        let mut b = sample("b", Source::Generated);
        b.quality = Some(report(900.0, 0.1, 0.9));
        let once = apply_filter(vec![a, b, sample("c", Source::Real)], &cfg()).unwrap();
        let twice = apply_filter(once.clone(), &cfg()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn non_finite_threshold_rejected() {
        let bad = FilterConfig {
            max_sq_rel: Some(f64::NAN),
            ..FilterConfig::default()
        };
        assert_eq!(
            apply_filter(vec![], &bad),
            Err(QualityError::NonFiniteThreshold("max_sq_rel"))
        );
    }
}
