//! Expert verdicts on recommendations, kept in an append-only JSON-lines log,
//! and their translation into retraining labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Label, LabelSource, LabeledPatch};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("unknown sha {0}")]
    UnknownSha(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("feedback log line {line}: {detail}")]
    CorruptLog { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCategory {
    NonBugFix,
    UnrelatedModule,
    NotRelevantToBaseline,
    MissingDependency,
    Other,
}

impl ReasonCategory {
    pub const ALL: [ReasonCategory; 5] = [
        ReasonCategory::NonBugFix,
        ReasonCategory::UnrelatedModule,
        ReasonCategory::NotRelevantToBaseline,
        ReasonCategory::MissingDependency,
        ReasonCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCategory::NonBugFix => "non_bug_fix",
            ReasonCategory::UnrelatedModule => "unrelated_module",
            ReasonCategory::NotRelevantToBaseline => "not_relevant_to_baseline",
            ReasonCategory::MissingDependency => "missing_dependency",
            ReasonCategory::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for ReasonCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub sha: String,
    pub verdict: Verdict,
    pub reason: Option<ReasonCategory>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
    pub ts: i64,
}

impl FeedbackRecord {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        match (self.verdict, self.reason) {
            (Verdict::Accepted, Some(r)) => Err(FeedbackError::InvalidRecord(format!(
                "accepted verdict carries reason `{r}`"
            ))),
            (Verdict::Rejected, None) => Err(FeedbackError::InvalidRecord(
                "rejected verdict needs a reason".into(),
            )),
            _ if !crate::patch::is_sha(&self.sha) => Err(FeedbackError::InvalidRecord(format!(
                "`{}` is not a 40-hex sha",
                self.sha
            ))),
            _ => Ok(()),
        }
    }
}

/// What a verdict means for the training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLabel {
    BugFix,
    NonBugFix,
    /// Rejected for reasons that say nothing about whether it fixes a bug.
    Excluded,
}

impl FeedbackLabel {
    pub fn of(rec: &FeedbackRecord) -> Self {
        match (rec.verdict, rec.reason) {
            (Verdict::Accepted, _) => FeedbackLabel::BugFix,
            (Verdict::Rejected, Some(ReasonCategory::NonBugFix)) => FeedbackLabel::NonBugFix,
            (Verdict::Rejected, _) => FeedbackLabel::Excluded,
        }
    }

    pub fn as_label(self) -> Option<Label> {
        match self {
            FeedbackLabel::BugFix => Some(Label::BugFix),
            FeedbackLabel::NonBugFix => Some(Label::NonBugFix),
            FeedbackLabel::Excluded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Acknowledgment {
    pub sha: String,
    pub label: FeedbackLabel,
    pub superseded: bool,
}

/// Append-only feedback log. Appends go through `&mut self`; readers only see
/// complete lines.
#[derive(Debug)]
pub struct FeedbackStore {
    path: PathBuf,
}

impl FeedbackStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FeedbackError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(FeedbackStore { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every complete record in log order.
    pub fn records(&self) -> Result<Vec<FeedbackRecord>, FeedbackError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        // A trailing fragment without newline is a write still in flight.
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| FeedbackError::CorruptLog {
                    line: i + 1,
                    detail: e.to_string(),
                })
            })
            .collect()
    }

    fn append(&mut self, rec: &FeedbackRecord) -> Result<(), FeedbackError> {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// The latest record per sha.
    pub fn latest(&self) -> Result<BTreeMap<String, FeedbackRecord>, FeedbackError> {
        Ok(latest_by_sha(self.records()?))
    }
}

fn latest_by_sha(records: Vec<FeedbackRecord>) -> BTreeMap<String, FeedbackRecord> {
    let mut out = BTreeMap::new();
    for r in records {
        out.insert(r.sha.clone(), r);
    }
    out
}

/// Validates and durably appends `rec`; `is_known` decides which shas may
/// receive feedback.
pub fn record_feedback(
    rec: FeedbackRecord,
    store: &mut FeedbackStore,
    is_known: impl Fn(&str) -> bool,
) -> Result<Acknowledgment, FeedbackError> {
    rec.validate()?;
    if !is_known(&rec.sha) {
        return Err(FeedbackError::UnknownSha(rec.sha));
    }
    let superseded = store.records()?.iter().any(|r| r.sha == rec.sha);
    store.append(&rec)?;
    Ok(Acknowledgment {
        label: FeedbackLabel::of(&rec),
        sha: rec.sha,
        superseded,
    })
}

/// Label view of a log: latest record per sha, in order of first appearance.
pub fn feedback_labels(records: &[FeedbackRecord]) -> Vec<(String, FeedbackLabel)> {
    let mut order: Vec<&str> = Vec::new();
    let mut latest: HashMap<&str, FeedbackLabel> = HashMap::new();
    for r in records {
        if latest.insert(&r.sha, FeedbackLabel::of(r)).is_none() {
            order.push(&r.sha);
        }
    }
    order
        .into_iter()
        .map(|sha| (sha.to_owned(), latest[sha]))
        .collect()
}

/// Applies feedback on top of `base`: expert labels win and excluded shas are
/// dropped. Order follows `base`.
pub fn assemble_retraining_corpus(
    base: &[LabeledPatch],
    labels: &[(String, FeedbackLabel)],
) -> Vec<LabeledPatch> {
    let by_sha: HashMap<&str, FeedbackLabel> =
        labels.iter().map(|(s, l)| (s.as_str(), *l)).collect();
    base.iter()
        .filter_map(|lp| match by_sha.get(lp.patch.sha()) {
            None => Some(lp.clone()),
            Some(FeedbackLabel::Excluded) => None,
            Some(fl) => Some(LabeledPatch {
                patch: lp.patch.clone(),
                label: fl.as_label().expect("non-excluded label"),
                source: LabelSource::ExpertFeedback,
            }),
        })
        .collect()
}
