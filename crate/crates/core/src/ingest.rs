//! Data acquisition: enumerate commits in a monitoring window, parse them, and
//! attach training labels.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::{self, ParseError, Patch, GIT_FORMAT};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("repository unavailable at {path}: {detail}")]
    RepoUnavailable { path: PathBuf, detail: String },
    #[error("invalid monitor window: {0}")]
    InvalidWindow(String),
    #[error("conflicting feedback labels for {sha}")]
    ConflictingFeedback { sha: String },
    #[error("label file line {line}: {detail}")]
    LabelFile { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Half-open author-date interval `[since, until)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorWindow {
    pub since: i64,
    pub until: i64,
    pub period_days: u32,
}

impl MonitorWindow {
    pub fn new(since: i64, until: i64, period_days: u32) -> Result<Self, IngestError> {
        if since >= until {
            return Err(IngestError::InvalidWindow(format!(
                "since {since} >= until {until}"
            )));
        }
        if period_days == 0 {
            return Err(IngestError::InvalidWindow(
                "period_days must be >= 1".into(),
            ));
        }
        Ok(MonitorWindow {
            since,
            until,
            period_days,
        })
    }

    /// The next window to process after `mark`, or the trailing period ending
    /// at `now` when nothing has been processed yet.
    pub fn following(
        mark: Option<&HighWaterMark>,
        period_days: u32,
        now: i64,
    ) -> Result<Self, IngestError> {
        let span = i64::from(period_days.max(1)) * SECONDS_PER_DAY;
        match mark {
            // Inclusive restart at the mark's second; sha dedup absorbs the overlap.
            Some(m) => Self::new(
                m.last_ts,
                (m.last_ts + span).min(now).max(m.last_ts + 1),
                period_days,
            ),
            None => Self::new(now - span, now, period_days),
        }
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.since <= ts && ts < self.until
    }
}

pub fn to_iso(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Accepts epoch seconds or an RFC 3339 / `YYYY-MM-DD` date.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(n) = s.parse::<i64>() {
        return Some(n);
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|d| d.and_utc().timestamp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "bugfix")]
    BugFix,
    #[serde(rename = "nonbugfix")]
    NonBugFix,
}

impl Label {
    pub fn as_target(self) -> u8 {
        match self {
            Label::BugFix => 1,
            Label::NonBugFix => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    StableRef,
    ExpertFeedback,
    #[serde(rename = "corpus")]
    CorpusFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub label: Label,
    pub source: LabelSource,
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub sha: String,
    pub label: Label,
    #[serde(default = "corpus_source")]
    pub source: LabelSource,
}

fn corpus_source() -> LabelSource {
    LabelSource::CorpusFile
}

pub fn parse_label_file(text: &str) -> Result<Vec<LabelEntry>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let entry: LabelEntry =
                serde_json::from_str(l).map_err(|e| IngestError::LabelFile {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            if !patch::is_sha(&entry.sha) {
                return Err(IngestError::LabelFile {
                    line: i + 1,
                    detail: format!("`{}` is not a 40-hex sha", entry.sha),
                });
            }
            Ok(entry)
        })
        .collect()
}

/// Last processed commit, persisted between monitoring runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighWaterMark {
    pub last_sha: String,
    pub last_ts: i64,
}

impl HighWaterMark {
    pub fn load(path: &Path) -> Result<Option<Self>, IngestError> {
        match fs::read_to_string(path) {
            Ok(s) => Ok(Some(serde_json::from_str(s.trim())?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Atomically replaces the mark file.
    pub fn store(&self, path: &Path) -> Result<(), IngestError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            writeln!(f, "{}", serde_json::to_string(self)?)?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Advances past the newest patch in `patches`, never moving backwards.
    pub fn advance(current: Option<&Self>, patches: &[Patch]) -> Option<Self> {
        let newest = patches
            .iter()
            .map(|p| (p.commit.author_date, p.commit.sha.as_str()))
            .max();
        match (current, newest) {
            (Some(c), Some((ts, sha))) if (ts, sha) <= (c.last_ts, c.last_sha.as_str()) => {
                Some(c.clone())
            }
            (_, Some((ts, sha))) => Some(HighWaterMark {
                last_sha: sha.to_owned(),
                last_ts: ts,
            }),
            (c, None) => c.cloned(),
        }
    }
}

/// Result of one collection run.
#[derive(Debug, Default)]
pub struct Collected {
    pub patches: Vec<Patch>,
    /// Commits git reported in the window that failed to parse.
    pub failures: Vec<(String, ParseError)>,
    /// Commits git enumerated inside the window.
    pub enumerated: usize,
}

fn git(repo: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.arg("-C")
        .arg(repo)
        .args(["-c", "core.quotePath=true"])
        .args(["-c", "diff.noprefix=false"])
        .args(["-c", "diff.mnemonicPrefix=false"])
        .args(["-c", "log.showSignature=false"]);
    cmd
}

fn run_git(repo: &Path, cmd: &mut Command) -> Result<String, IngestError> {
    let out = cmd.output().map_err(|e| IngestError::RepoUnavailable {
        path: repo.to_owned(),
        detail: e.to_string(),
    })?;
    if !out.status.success() {
        return Err(IngestError::RepoUnavailable {
            path: repo.to_owned(),
            detail: String::from_utf8_lossy(&out.stderr).trim().to_owned(),
        });
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Canonical-template text for one commit.
pub fn show_commit(repo: &Path, sha: &str) -> Result<String, IngestError> {
    run_git(
        repo,
        git(repo).args([
            "show",
            &format!("--format={GIT_FORMAT}"),
            "--patch",
            "--no-color",
            "--find-renames",
            "--no-ext-diff",
            "--no-textconv",
            sha,
        ]),
    )
}

/// Non-merge commits reachable from HEAD with author date in the window,
/// ascending by `(author_date, sha)`.
pub fn enumerate(repo: &Path, window: &MonitorWindow) -> Result<Vec<(i64, String)>, IngestError> {
    if !repo.exists() {
        return Err(IngestError::RepoUnavailable {
            path: repo.to_owned(),
            detail: "path does not exist".into(),
        });
    }
    // git's --since/--until act on committer dates; the window is on author dates.
    let listing = run_git(
        repo,
        git(repo).args(["log", "--no-merges", "--format=%at %H"]),
    )?;
    let mut commits: Vec<(i64, String)> = listing
        .lines()
        .filter_map(|l| {
            let (ts, sha) = l.split_once(' ')?;
            Some((ts.parse().ok()?, sha.to_owned()))
        })
        .filter(|(ts, _)| window.contains(*ts))
        .collect();
    commits.sort();
    Ok(commits)
}

pub fn collect(repo: &Path, window: &MonitorWindow) -> Result<Collected, IngestError> {
    let commits = enumerate(repo, window)?;
    let mut out = Collected {
        enumerated: commits.len(),
        ..Default::default()
    };
    for (_, sha) in commits {
        let text = show_commit(repo, &sha)?;
        match patch::parse_patch(&text) {
            Ok(p) => out.patches.push(p),
            Err(e) => {
                warn!("skipping {sha}: {e}");
                out.failures.push((sha, e));
            }
        }
    }
    if !out.failures.is_empty() {
        warn!(
            "{} of {} commits failed to parse",
            out.failures.len(),
            out.enumerated
        );
    }
    Ok(out)
}

static UPSTREAM_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:commit\s+([0-9a-f]{40})\s+upstream\.?|\[\s*upstream\s+commit\s+([0-9a-f]{40})\s*\])")
        .unwrap()
});

/// Mainline shas referenced by backport markers in a stable-tree `git log`.
pub fn scan_stable_refs(stable_log_text: &str) -> BTreeSet<String> {
    stable_log_text
        .lines()
        .filter_map(|l| UPSTREAM_RE.captures(l))
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().to_ascii_lowercase())
        .collect()
}

/// Labels patches. Precedence: expert feedback, then label-file entries, then
/// stable references; anything unlabeled is a non-fix.
pub fn build_corpus(
    patches: &[Patch],
    stable_shas: &BTreeSet<String>,
    label_entries: &[LabelEntry],
    feedback_labels: &[(String, Label)],
) -> Result<Vec<LabeledPatch>, IngestError> {
    let mut feedback: HashMap<&str, Label> = HashMap::new();
    for (sha, label) in feedback_labels {
        if let Some(prev) = feedback.insert(sha.as_str(), *label) {
            if prev != *label {
                return Err(IngestError::ConflictingFeedback { sha: sha.clone() });
            }
        }
    }
    let corpus: HashMap<&str, Label> = label_entries
        .iter()
        .map(|e| (e.sha.as_str(), e.label))
        .collect();
    Ok(patches
        .iter()
        .map(|p| {
            let sha = p.sha();
            let (label, source) = if let Some(l) = feedback.get(sha) {
                (*l, LabelSource::ExpertFeedback)
            } else if let Some(l) = corpus.get(sha) {
                (*l, LabelSource::CorpusFile)
            } else if stable_shas.contains(sha) {
                (Label::BugFix, LabelSource::StableRef)
            } else {
                (Label::NonBugFix, LabelSource::StableRef)
            };
            LabeledPatch {
                patch: p.clone(),
                label,
                source,
            }
        })
        .collect())
}
