//! Rubric scoring of evaluation episodes from annotated failure events.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GOLDEN_RULES: &str = include_str!("../assets/rule_tables.toml");

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("rule tables: {0}")]
    Parse(String),
    #[error("rule table {task}: {reason}")]
    InvalidTable { task: String, reason: String },
    #[error("no rule table for task {0:?}")]
    UnknownTask(String),
    #[error("event {event:?} is not defined for task {task:?}")]
    UnknownEvent { task: String, event: String },
    #[error("episode is for task {log:?} but the rule table is for {table:?}")]
    TaskMismatch { log: String, table: String },
    #[error("cannot aggregate an empty episode list")]
    EmptyInput,
    #[error("{scores} scores but {successes} success flags")]
    LengthMismatch { scores: usize, successes: usize },
    #[error("episode log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub event: String,
    pub deduction: i32,
    pub group: String,
    #[serde(default)]
    pub overrides: bool,
}

fn default_max_score() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    pub name: String,
    #[serde(default = "default_max_score")]
    pub max_score: u32,
    #[serde(rename = "rule")]
    pub rules: Vec<Rule>,
}

impl RuleTable {
    fn validate(&self) -> Result<(), BehaviorError> {
        let invalid = |reason: String| BehaviorError::InvalidTable {
            task: self.name.clone(),
            reason,
        };
        if self.max_score == 0 {
            return Err(invalid("max_score must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.rules {
            if r.deduction >= 0 {
                return Err(invalid(format!("deduction for {} must be negative", r.event)));
            }
            if !seen.insert(r.event.as_str()) {
                return Err(invalid(format!("event {} listed twice", r.event)));
            }
        }
        Ok(())
    }

    pub fn rule(&self, event: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.event == event)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    task: Vec<RuleTable>,
}

/// Rule tables keyed by task name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleBook {
    tables: BTreeMap<String, RuleTable>,
}

impl RuleBook {
    pub fn from_toml(text: &str) -> Result<Self, BehaviorError> {
        let file: RuleFile = toml::from_str(text).map_err(|e| BehaviorError::Parse(e.to_string()))?;
        let mut tables = BTreeMap::new();
        for t in file.task {
            t.validate()?;
            let name = t.name.clone();
            if tables.insert(name.clone(), t).is_some() {
                return Err(BehaviorError::InvalidTable {
                    task: name,
                    reason: "task defined twice".into(),
                });
            }
        }
        Ok(Self { tables })
    }

    /// The shipped fold_cloth, clean_desk and throw_bottle tables.
    pub fn golden() -> Self {
        Self::from_toml(GOLDEN_RULES).expect("shipped rule tables are valid")
    }

    pub fn table(&self, task: &str) -> Result<&RuleTable, BehaviorError> {
        self.tables
            .get(task)
            .ok_or_else(|| BehaviorError::UnknownTask(task.to_string()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLog {
    pub task: String,
    #[serde(default)]
    pub events: BTreeSet<String>,
    pub success: bool,
}

impl EpisodeLog {
    pub fn new<'a>(task: &str, events: impl IntoIterator<Item = &'a str>, success: bool) -> Self {
        Self {
            task: task.to_string(),
            events: events.into_iter().map(str::to_string).collect(),
            success,
        }
    }
}

pub fn score_episode(log: &EpisodeLog, table: &RuleTable) -> Result<u32, BehaviorError> {
    if log.task != table.name {
        return Err(BehaviorError::TaskMismatch {
            log: log.task.clone(),
            table: table.name.clone(),
        });
    }
    let mut worst: BTreeMap<&str, i32> = BTreeMap::new();
    for event in &log.events {
        let rule = table.rule(event).ok_or_else(|| BehaviorError::UnknownEvent {
            task: table.name.clone(),
            event: event.clone(),
        })?;
        if rule.overrides {
            return Ok((table.max_score as i64 + rule.deduction as i64).max(0) as u32);
        }
        let slot = worst.entry(rule.group.as_str()).or_insert(0);
        *slot = (*slot).min(rule.deduction);
    }
    let total: i64 = table.max_score as i64 + worst.values().map(|&d| d as i64).sum::<i64>();
    Ok(total.max(0) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub episodes: usize,
    pub mean_score: f64,
    /// Percentage in `[0, 100]`.
    pub success_rate: f64,
}

pub fn aggregate(scores: &[u32], successes: &[bool]) -> Result<Aggregate, BehaviorError> {
    if scores.len() != successes.len() {
        return Err(BehaviorError::LengthMismatch {
            scores: scores.len(),
            successes: successes.len(),
        });
    }
    if scores.is_empty() {
        return Err(BehaviorError::EmptyInput);
    }
    let n = scores.len();
    let wins = successes.iter().filter(|&&s| s).count();
    Ok(Aggregate {
        episodes: n,
        mean_score: scores.iter().map(|&s| s as f64).sum::<f64>() / n as f64,
        success_rate: (100 * wins) as f64 / n as f64,
    })
}

/// `65%`, `33.3%`.
pub fn format_percent(p: f64) -> String {
    let s = format!("{p:.1}");
    format!("{}%", s.strip_suffix(".0").unwrap_or(&s))
}

pub fn parse_episode_logs(text: &str) -> Result<Vec<EpisodeLog>, BehaviorError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BehaviorError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Per-task aggregates, in task-name order.
pub fn evaluate(logs: &[EpisodeLog], book: &RuleBook) -> Result<BTreeMap<String, Aggregate>, BehaviorError> {
    let mut by_task: BTreeMap<&str, (Vec<u32>, Vec<bool>)> = BTreeMap::new();
    for log in logs {
        let score = score_episode(log, book.table(&log.task)?)?;
        let (s, w) = by_task.entry(log.task.as_str()).or_default();
        s.push(score);
        w.push(log.success);
    }
    by_task
        .into_iter()
        .map(|(task, (s, w))| Ok((task.to_string(), aggregate(&s, &w)?)))
        .collect()
}
