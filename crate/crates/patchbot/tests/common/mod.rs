#![allow(dead_code)]

pub mod contract;

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use patchbot::api::{router, AppState, Clock};
use patchbot::store::{AnalysisRecord, Store};
use patchbot::Config;
use patchbot_core::patch::{ChangeKind, Commit, FileChange, Hunk, HunkLine, LineTag, Patch};
use patchbot_core::pipeline::ScoredPatch;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub const MODULES: &str = "fs/\nmm/\nkernel/\n";
pub const NOW: i64 = 1_700_000_000;

pub struct Fixture {
    pub dir: TempDir,
    pub config_path: PathBuf,
    pub cfg: Config,
}

impl Fixture {
    /// A deployment directory with relative paths; `extra` keys are merged
    /// into the config file.
    pub fn new(extra: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut doc = serde_json::json!({
            "repo_path": "repo",
            "module_list_path": "modules.txt",
            "bundle_dir": "bundle",
            "store_dir": "store",
        });
        for (k, v) in extra.as_object().unwrap() {
            doc[k] = v.clone();
        }
        fs::write(dir.path().join("modules.txt"), MODULES).unwrap();
        let config_path = dir.path().join("config.json");
        fs::write(&config_path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        let cfg = Config::load_with_env(&config_path, |_| None).unwrap();
        Fixture {
            dir,
            config_path,
            cfg,
        }
    }

    pub fn store(&self) -> Store {
        Store::open(&self.cfg.store_dir).unwrap()
    }

    pub fn state(&self) -> Arc<AppState> {
        let clock: Clock = Arc::new(|| NOW);
        Arc::new(AppState::new(self.cfg.clone(), clock).unwrap())
    }

    pub fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }
}

pub fn sha(n: u32) -> String {
    format!("{n:040x}")
}

/// A one-file, one-hunk patch.
pub fn simple_patch(n: u32, path: &str, subject: &str, body: &str, ts: i64) -> Patch {
    let lines = vec![
        HunkLine {
            tag: LineTag::Context,
            text: "\tint ret;".into(),
        },
        HunkLine {
            tag: LineTag::Removed,
            text: "\tkfree(buf);".into(),
        },
        HunkLine {
            tag: LineTag::Added,
            text: "\tif (buf)".into(),
        },
        HunkLine {
            tag: LineTag::Added,
            text: "\t\tkfree(buf);".into(),
        },
    ];
    Patch {
        commit: Commit {
            sha: sha(n),
            author_name: "Ada Dev".into(),
            author_email: "ada@example.org".into(),
            author_date: ts,
            subject: subject.into(),
            body: body.into(),
        },
        files: vec![FileChange {
            old_path: path.into(),
            new_path: path.into(),
            kind: ChangeKind::Modify,
            binary: false,
            hunks: vec![Hunk {
                old_start: 10,
                old_count: 2,
                new_start: 10,
                new_count: 3,
                lines,
            }],
        }],
    }
}

/// An analysis record with a fixed score; `None` marks an unconcerned patch.
pub fn analysis(p: &Patch, score: Option<(f64, bool, f64)>, threshold: f64) -> AnalysisRecord {
    AnalysisRecord {
        sha: p.commit.sha.clone(),
        author_date: p.commit.author_date,
        concerned: score.is_some(),
        scored: score.map(|(raw, cc, fin)| ScoredPatch {
            sha: p.commit.sha.clone(),
            subject: p.commit.subject.clone(),
            author_date: p.commit.author_date,
            paths: p.files.iter().map(|f| f.new_path.clone()).collect(),
            raw_score: raw,
            cc_stable: cc,
            final_score: fin,
            recommended: fin >= threshold,
        }),
        error: None,
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_owned())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    Reply {
        status,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Option<&str>) -> Reply {
    call(app, Method::POST, uri, body).await
}

/// Polls a job until it leaves the queued/running states.
pub async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..6000 {
        let job = get(app, &format!("/api/jobs/{id}")).await.json();
        if job["state"] == "succeeded" || job["state"] == "failed" {
            return job;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    panic!("job {id} did not finish");
}

pub fn app(f: &Fixture) -> Router {
    router(f.state())
}
