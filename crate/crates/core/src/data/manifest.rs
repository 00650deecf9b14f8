//! Newline-delimited JSON manifest.
//!
//! The first line is a header `{"version":..,"task":..}`; every following
//! line describes one sample and the sidecar files it references, each with
//! an FNV-1a checksum. Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binary::{self, Embeddings, Grid};
use super::{DataError, JointTrajectory, SampleRecord, Source};
use crate::checksum::{fnv1a64, parse_hex, to_hex};
use crate::quality::{QualityReport, Verdict};

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    version: String,
    task: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFiles {
    pub pred: String,
    pub gt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewFiles {
    pub center: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTag {
    Foreground,
    Background,
    Lighting,
}

/// One manifest line. Field order here is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub source: Source,
    pub task: String,
    pub traj_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_files: Option<DepthFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_files: Option<ViewFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_file: Option<String>,
    /// Order of the component vectors stored in `prompt_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tags: Option<Vec<PromptTag>>,
    pub checksum_traj: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_pred: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_depth_pred: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_depth_gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_view_center: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_view_left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_view_right: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_embed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
}

/// A referenced sidecar file and the checksum the manifest claims for it.
#[derive(Debug, Clone, Copy)]
pub struct FileRef<'a> {
    pub role: &'static str,
    pub file: &'a str,
    pub checksum: Option<&'a str>,
}

impl ManifestRecord {
    pub fn new(id: impl Into<String>, source: Source, task: impl Into<String>, traj_file: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source,
            task: task.into(),
            traj_file: traj_file.into(),
            pred_file: None,
            depth_files: None,
            view_files: None,
            embed_file: None,
            prompt_file: None,
            prompt_tags: None,
            checksum_traj: String::new(),
            checksum_pred: None,
            checksum_depth_pred: None,
            checksum_depth_gt: None,
            checksum_view_center: None,
            checksum_view_left: None,
            checksum_view_right: None,
            checksum_embed: None,
            checksum_prompt: None,
            weight: None,
            verdict: None,
        }
    }

    pub fn file_refs(&self) -> Vec<FileRef<'_>> {
        fn opt<'a>(out: &mut Vec<FileRef<'a>>, role: &'static str, f: Option<&'a String>, c: &'a Option<String>) {
            if let Some(file) = f {
                out.push(FileRef {
                    role,
                    file,
                    checksum: c.as_deref(),
                });
            }
        }
        let mut out = vec![FileRef {
            role: "traj",
            file: &self.traj_file,
            checksum: Some(&self.checksum_traj),
        }];
        opt(&mut out, "pred", self.pred_file.as_ref(), &self.checksum_pred);
        if let Some(d) = &self.depth_files {
            opt(&mut out, "depth_pred", Some(&d.pred), &self.checksum_depth_pred);
            opt(&mut out, "depth_gt", Some(&d.gt), &self.checksum_depth_gt);
        }
        if let Some(v) = &self.view_files {
            opt(&mut out, "view_center", Some(&v.center), &self.checksum_view_center);
            opt(&mut out, "view_left", Some(&v.left), &self.checksum_view_left);
            opt(&mut out, "view_right", Some(&v.right), &self.checksum_view_right);
        }
        opt(&mut out, "embed", self.embed_file.as_ref(), &self.checksum_embed);
        opt(&mut out, "prompt", self.prompt_file.as_ref(), &self.checksum_prompt);
        out
    }

    /// Recomputes every checksum from the files under `base_dir`.
    pub fn refresh_checksums(&mut self, base_dir: &Path) -> Result<(), DataError> {
        let sum = |file: &str| -> Result<String, DataError> {
            let path = base_dir.join(file);
            let bytes = fs::read(&path).map_err(|source| DataError::Io { path, source })?;
            Ok(to_hex(fnv1a64(&bytes)))
        };
        let opt_sum = |file: Option<&String>| file.map(|f| sum(f)).transpose();
        self.checksum_traj = sum(&self.traj_file)?;
        self.checksum_pred = opt_sum(self.pred_file.as_ref())?;
        self.checksum_depth_pred = opt_sum(self.depth_files.as_ref().map(|d| &d.pred))?;
        self.checksum_depth_gt = opt_sum(self.depth_files.as_ref().map(|d| &d.gt))?;
        self.checksum_view_center = opt_sum(self.view_files.as_ref().map(|v| &v.center))?;
        self.checksum_view_left = opt_sum(self.view_files.as_ref().map(|v| &v.left))?;
        self.checksum_view_right = opt_sum(self.view_files.as_ref().map(|v| &v.right))?;
        self.checksum_embed = opt_sum(self.embed_file.as_ref())?;
        self.checksum_prompt = opt_sum(self.prompt_file.as_ref())?;
        Ok(())
    }

    fn parsed_verdict(&self) -> Option<Verdict> {
        self.verdict.as_deref().and_then(Verdict::parse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: String,
    pub task: String,
    pub records: Vec<ManifestRecord>,
    /// Directory that relative sidecar paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(task: impl Into<String>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            task: task.into(),
            records: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        self.base_dir.join(file)
    }

    pub fn record(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Canonical text form: header line then one record per line, each
    /// terminated by `\n`.
    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            version: self.version.clone(),
            task: self.task.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn load_trajectory(&self, rec: &ManifestRecord) -> Result<JointTrajectory, DataError> {
        let t = binary::read_file(&self.resolve(&rec.traj_file), binary::decode_trajectory)?;
        let violations = super::validate_trajectory(&t);
        if !violations.is_empty() {
            return Err(DataError::InvalidTrajectory(violations));
        }
        Ok(t)
    }

    /// Loads the full payload of one record into a [`SampleRecord`].
    pub fn load_sample(&self, rec: &ManifestRecord) -> Result<SampleRecord, DataError> {
        let trajectory = self.load_trajectory(rec)?;
        let mut sample = SampleRecord::new(rec.id.clone(), rec.source, rec.task.clone(), trajectory);
        if let Some(pred) = &rec.pred_file {
            let joints = sample.trajectory.joints();
            let windows = binary::read_file(&self.resolve(pred), |b| binary::decode_predictions(b, joints))?;
            for w in &windows {
                w.check_against(sample.trajectory.frames(), joints)?;
            }
            sample.prediction_windows = windows;
        }
        sample.weight = rec.weight;
        if rec.source == Source::Generated {
            if let Some(v) = rec.parsed_verdict() {
                sample.quality = Some(QualityReport {
                    verdict: Some(v),
                    ..QualityReport::default()
                });
            }
        }
        Ok(sample)
    }

    pub fn load_samples(&self) -> Result<Vec<SampleRecord>, DataError> {
        self.records.par_iter().map(|r| self.load_sample(r)).collect()
    }

    pub fn load_depth(&self, rec: &ManifestRecord) -> Result<Option<(Grid, Grid)>, DataError> {
        let Some(d) = &rec.depth_files else { return Ok(None) };
        let pred = binary::read_file(&self.resolve(&d.pred), binary::decode_grid)?;
        let gt = binary::read_file(&self.resolve(&d.gt), binary::decode_grid)?;
        Ok(Some((pred, gt)))
    }

    /// Returns `(center, left, right)` view stacks.
    pub fn load_views(&self, rec: &ManifestRecord) -> Result<Option<(Grid, Grid, Grid)>, DataError> {
        let Some(v) = &rec.view_files else { return Ok(None) };
        let read = |f: &str| binary::read_file(&self.resolve(f), binary::decode_grid);
        Ok(Some((read(&v.center)?, read(&v.left)?, read(&v.right)?)))
    }

    /// Returns frame embeddings and prompt component embeddings with tags.
    pub fn load_embeddings(
        &self,
        rec: &ManifestRecord,
    ) -> Result<Option<(Embeddings, Embeddings, Vec<PromptTag>)>, DataError> {
        let (Some(embed), Some(prompt)) = (&rec.embed_file, &rec.prompt_file) else {
            return Ok(None);
        };
        let frames = binary::read_file(&self.resolve(embed), binary::decode_embeddings)?;
        let prompts = binary::read_file(&self.resolve(prompt), binary::decode_embeddings)?;
        let tags = rec
            .prompt_tags
            .clone()
            .unwrap_or_else(|| vec![PromptTag::Foreground, PromptTag::Background, PromptTag::Lighting]);
        Ok(Some((frames, prompts, tags)))
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> DataError {
    DataError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

/// Parses manifest text without touching any referenced files.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest, DataError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_idx, header_line) = lines.next().ok_or_else(|| malformed(1, "empty manifest"))?;
    let header: ManifestHeader =
        serde_json::from_str(header_line).map_err(|e| malformed(header_idx + 1, format!("header: {e}")))?;
    if header.version != MANIFEST_VERSION {
        return Err(malformed(
            header_idx + 1,
            format!("unsupported manifest version {:?}", header.version),
        ));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| malformed(idx + 1, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(malformed(idx + 1, "empty id"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::DuplicateId(rec.id));
        }
        for f in rec.file_refs() {
            match f.checksum {
                None => {
                    return Err(malformed(
                        idx + 1,
                        format!("record {}: {} file has no checksum", rec.id, f.role),
                    ))
                }
                Some(c) if parse_hex(c).is_none() => {
                    return Err(malformed(idx + 1, format!("record {}: bad checksum {c:?}", rec.id)))
                }
                Some(_) => {}
            }
        }
        if let Some(w) = rec.weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(malformed(
                    idx + 1,
                    format!("record {}: weight {w} outside [0, 1]", rec.id),
                ));
            }
        }
        if let Some(v) = &rec.verdict {
            if Verdict::parse(v).is_none() {
                return Err(malformed(idx + 1, format!("record {}: bad verdict {v:?}", rec.id)));
            }
        }
        records.push(rec);
    }
    Ok(DatasetManifest {
        version: header.version,
        task: header.task,
        records,
        base_dir: base_dir.to_path_buf(),
    })
}

/// Reads a manifest and verifies that every referenced file exists and
/// matches its checksum. Sample payloads are decoded later on demand.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &base_dir)?;
    let checks: Vec<Result<(), DataError>> = manifest
        .records
        .par_iter()
        .map(|rec| verify_record(&manifest, rec))
        .collect();
    checks.into_iter().collect::<Result<(), _>>()?;
    Ok(manifest)
}

fn verify_record(manifest: &DatasetManifest, rec: &ManifestRecord) -> Result<(), DataError> {
    for f in rec.file_refs() {
        let path = manifest.resolve(f.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(DataError::MissingFile {
                    id: rec.id.clone(),
                    file: f.file.to_string(),
                })
            }
            Err(source) => return Err(DataError::Io { path, source }),
        };
        let actual = to_hex(fnv1a64(&bytes));
        let expected = f.checksum.unwrap_or_default();
        if actual != expected {
            return Err(DataError::ChecksumMismatch {
                id: rec.id.clone(),
                file: f.file.to_string(),
                expected: expected.to_string(),
                actual,
            });
        }
    }
    Ok(())
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DataError> {
    fs::write(path, manifest.to_jsonl()).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
