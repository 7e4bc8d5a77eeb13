//! Persisted records for long-running ingest and retrain jobs.

use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::AppError;
use crate::store::{write_atomic, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Ingest,
    Retrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    /// ISO-8601 UTC.
    pub created_at: String,
    pub finished_at: Option<String>,
    pub result: Option<Value>,
    pub error: Option<JobError>,
}

/// Allocates sequential ids (`job-000001`, ...) and persists records as
/// `jobs/<id>.json`.
#[derive(Debug)]
pub struct Jobs {
    dir: PathBuf,
    next: Mutex<()>,
}

fn is_job_id(id: &str) -> bool {
    id.strip_prefix("job-")
        .is_some_and(|n| n.len() == 6 && n.bytes().all(|b| b.is_ascii_digit()))
}

impl Jobs {
    pub fn new(store: &Store) -> Self {
        Jobs {
            dir: store.jobs_dir(),
            next: Mutex::new(()),
        }
    }

    pub fn create(&self, kind: JobKind, created_at: String) -> Result<JobRecord, AppError> {
        let _guard = self.next.lock().expect("job id lock");
        let mut n = 0;
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json").filter(|id| is_job_id(id)) {
                n = n.max(id[4..].parse::<u32>().unwrap_or(0));
            }
        }
        let job = JobRecord {
            id: format!("job-{:06}", n + 1),
            kind,
            state: JobState::Queued,
            created_at,
            finished_at: None,
            result: None,
            error: None,
        };
        self.save(&job)?;
        Ok(job)
    }

    pub fn save(&self, job: &JobRecord) -> Result<(), AppError> {
        let text = serde_json::to_string_pretty(job)? + "\n";
        write_atomic(&self.dir.join(format!("{}.json", job.id)), text.as_bytes())
    }

    pub fn get(&self, id: &str) -> Result<JobRecord, AppError> {
        let missing = || AppError::not_found("unknown_job", format!("unknown job {id}"));
        if !is_job_id(id) {
            return Err(missing());
        }
        match fs::read_to_string(self.dir.join(format!("{id}.json"))) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(missing()),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub detail: String,
}

impl From<&AppError> for JobError {
    fn from(e: &AppError) -> Self {
        JobError {
            code: e.code.to_owned(),
            detail: e.detail.clone(),
        }
    }
}
