//! On-disk state under `store_dir`: ingested patches, analysis results,
//! the feedback log, the ingest high-water mark and job records. Every log is
//! append-only JSON lines; readers ignore a trailing line still being written.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use patchbot_core::feedback::{FeedbackRecord, FeedbackStore};
use patchbot_core::ingest::MonitorWindow;
use patchbot_core::patch::Patch;
use patchbot_core::pipeline::{Funnel, ScoredPatch};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::AppError;

pub const PATCHES_FILE: &str = "patches.jsonl";
pub const ANALYSIS_FILE: &str = "analysis.jsonl";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const HWM_FILE: &str = "hwm.json";
pub const JOBS_DIR: &str = "jobs";
const INGEST_LOCK: &str = ".ingest.lock";

/// Outcome of running one stored patch through the predicting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub sha: String,
    pub author_date: i64,
    pub concerned: bool,
    #[serde(default)]
    pub scored: Option<ScoredPatch>,
    #[serde(default)]
    pub error: Option<String>,
}

impl AnalysisRecord {
    pub fn recommended(&self) -> bool {
        self.scored.as_ref().is_some_and(|s| s.recommended)
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AppError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                AppError::internal(
                    "corrupt_store",
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })
        })
        .collect()
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), AppError> {
    if items.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item)?);
        buf.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(buf.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn in_window(window: Option<&MonitorWindow>, ts: i64) -> bool {
    window.is_none_or(|w| w.contains(ts))
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, AppError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(JOBS_DIR))?;
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hwm_path(&self) -> PathBuf {
        self.dir.join(HWM_FILE)
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.dir.join(JOBS_DIR)
    }

    pub fn feedback(&self) -> Result<FeedbackStore, AppError> {
        Ok(FeedbackStore::open(self.dir.join(FEEDBACK_FILE))?)
    }

    pub fn feedback_latest(&self) -> Result<BTreeMap<String, FeedbackRecord>, AppError> {
        Ok(self.feedback()?.latest()?)
    }

    /// Stored patches, first copy per sha, ascending by `(author_date, sha)`.
    pub fn patches(&self) -> Result<Vec<Patch>, AppError> {
        let mut seen = BTreeSet::new();
        let mut out: Vec<Patch> = read_jsonl::<Patch>(&self.dir.join(PATCHES_FILE))?
            .into_iter()
            .filter(|p| seen.insert(p.commit.sha.clone()))
            .collect();
        out.sort_by(|a, b| {
            (a.commit.author_date, &a.commit.sha).cmp(&(b.commit.author_date, &b.commit.sha))
        });
        Ok(out)
    }

    pub fn patches_in(&self, window: Option<&MonitorWindow>) -> Result<Vec<Patch>, AppError> {
        Ok(self
            .patches()?
            .into_iter()
            .filter(|p| in_window(window, p.commit.author_date))
            .collect())
    }

    pub fn patch(&self, sha: &str) -> Result<Option<Patch>, AppError> {
        Ok(self.patches()?.into_iter().find(|p| p.commit.sha == sha))
    }

    /// Appends patches whose sha is not stored yet; returns how many were new.
    pub fn add_patches(&self, patches: &[Patch]) -> Result<usize, AppError> {
        let mut known: BTreeSet<String> =
            self.patches()?.into_iter().map(|p| p.commit.sha).collect();
        let fresh: Vec<&Patch> = patches
            .iter()
            .filter(|p| known.insert(p.commit.sha.clone()))
            .collect();
        append_jsonl(&self.dir.join(PATCHES_FILE), &fresh)?;
        Ok(fresh.len())
    }

    /// Latest analysis per sha.
    pub fn analyses(&self) -> Result<BTreeMap<String, AnalysisRecord>, AppError> {
        let mut out = BTreeMap::new();
        for r in read_jsonl::<AnalysisRecord>(&self.dir.join(ANALYSIS_FILE))? {
            out.insert(r.sha.clone(), r);
        }
        Ok(out)
    }

    pub fn analyses_in(
        &self,
        window: Option<&MonitorWindow>,
    ) -> Result<Vec<AnalysisRecord>, AppError> {
        Ok(self
            .analyses()?
            .into_values()
            .filter(|r| in_window(window, r.author_date))
            .collect())
    }

    pub fn add_analyses(&self, records: &[AnalysisRecord]) -> Result<(), AppError> {
        append_jsonl(&self.dir.join(ANALYSIS_FILE), records)
    }

    /// Funnel over the analyses in `window`, with the latest verdicts applied.
    pub fn funnel(&self, window: Option<&MonitorWindow>) -> Result<Funnel, AppError> {
        let records = self.analyses_in(window)?;
        let latest = self.feedback_latest()?;
        Ok(funnel_of(&records, latest.values()))
    }

    pub fn lock_ingest(&self) -> Result<StoreLock, AppError> {
        StoreLock::acquire(self.dir.join(INGEST_LOCK), "ingest_in_progress")
    }
}

pub fn funnel_of<'a>(
    records: &[AnalysisRecord],
    latest: impl IntoIterator<Item = &'a FeedbackRecord>,
) -> Funnel {
    let mut funnel = Funnel {
        analyzed: records.len(),
        concerned: records.iter().filter(|r| r.concerned).count(),
        recommended: records.iter().filter(|r| r.recommended()).count(),
        ..Default::default()
    };
    let recommended: Vec<&str> = records
        .iter()
        .filter(|r| r.recommended())
        .map(|r| r.sha.as_str())
        .collect();
    funnel.apply_feedback(&recommended, latest);
    funnel
}

/// A lock file created with `create_new`, removed on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    fn acquire(path: PathBuf, busy_code: &'static str) -> Result<Self, AppError> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(StoreLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(AppError::conflict(
                busy_code,
                format!("{} is held", path.display()),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
