//! Every CLI subcommand and HTTP endpoint is a thin wrapper over a function
//! here, so both front ends produce the same results.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use patchbot_core::bundle::{load_model, save_model, Bundle, TrainLock, MANIFEST_FILE};
use patchbot_core::classifier::{self, Metrics};
use patchbot_core::feedback::{
    assemble_retraining_corpus, feedback_labels, record_feedback, Acknowledgment, FeedbackLabel,
    FeedbackRecord, ReasonCategory, Verdict,
};
use patchbot_core::filter::{is_concerned, ModuleList};
use patchbot_core::ingest::{
    build_corpus, collect, parse_label_file, scan_stable_refs, to_iso, HighWaterMark, Label,
    LabelSource, LabeledPatch, MonitorWindow,
};
use patchbot_core::patch::{changed_paths, render_diff, Patch};
use patchbot_core::pipeline::{
    evaluate_patches, recommendations as ranked, render_report, score_patch, Funnel,
    KeywordBaseline, ReportFormat,
};
use patchbot_core::preprocess::prepare_corpus;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::AppError;
use crate::store::{AnalysisRecord, Store};

pub fn open_store(cfg: &Config) -> Result<Store, AppError> {
    Store::open(&cfg.store_dir)
}

pub fn load_modules(cfg: &Config) -> Result<ModuleList, AppError> {
    let text = fs::read_to_string(&cfg.module_list_path).map_err(|e| {
        AppError::bad_request(
            "invalid_module_list",
            format!("{}: {e}", cfg.module_list_path.display()),
        )
    })?;
    let modules = ModuleList::parse(&text)?;
    modules.warn_if_empty();
    Ok(modules)
}

/// Loads the deployed bundle; a directory without a manifest is reported as
/// `model_unavailable`.
pub fn load_bundle(dir: &Path) -> Result<Bundle, AppError> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(AppError::new(
            "model_unavailable",
            503,
            format!("no model bundle in {}", dir.display()),
        ));
    }
    Ok(load_model(dir)?)
}

pub fn window_from(
    since: Option<i64>,
    until: Option<i64>,
    period_days: u32,
) -> Result<Option<MonitorWindow>, AppError> {
    match (since, until) {
        (None, None) => Ok(None),
        (Some(s), Some(u)) => Ok(Some(MonitorWindow::new(s, u, period_days)?)),
        _ => Err(AppError::bad_request(
            "invalid_window",
            "since and until go together",
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub since: String,
    pub until: String,
    pub enumerated: usize,
    pub parsed: usize,
    pub new_patches: usize,
    pub parse_failures: Vec<String>,
    pub high_water_mark: Option<String>,
}

/// Collects commits into the store. Without an explicit window, the window
/// follows the high-water mark and the mark advances afterwards.
pub fn ingest(
    cfg: &Config,
    window: Option<MonitorWindow>,
    now: i64,
) -> Result<IngestSummary, AppError> {
    let store = open_store(cfg)?;
    let _lock = store.lock_ingest()?;
    let mark = HighWaterMark::load(&store.hwm_path())?;
    let (window, advance) = match window {
        Some(w) => (w, false),
        None => (
            MonitorWindow::following(mark.as_ref(), cfg.period_days, now)?,
            true,
        ),
    };
    let collected = collect(&cfg.repo_path, &window)?;
    let new_patches = store.add_patches(&collected.patches)?;
    let mut mark_out = mark.clone();
    if advance {
        mark_out = HighWaterMark::advance(mark.as_ref(), &collected.patches);
        if let Some(m) = &mark_out {
            m.store(&store.hwm_path())?;
        }
    }
    info!(
        "ingested {new_patches} new of {} commits in window",
        collected.enumerated
    );
    Ok(IngestSummary {
        since: to_iso(window.since),
        until: to_iso(window.until),
        enumerated: collected.enumerated,
        parsed: collected.patches.len(),
        new_patches,
        parse_failures: collected
            .failures
            .iter()
            .map(|(sha, e)| format!("{sha}: {e}"))
            .collect(),
        high_water_mark: mark_out.map(|m| m.last_sha),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub analyzed: usize,
    pub concerned: usize,
    pub recommended: usize,
    pub failures: usize,
}

fn analyze_patch(p: &Patch, modules: &ModuleList, bundle: &Bundle, cfg: &Config) -> AnalysisRecord {
    let mut rec = AnalysisRecord {
        sha: p.commit.sha.clone(),
        author_date: p.commit.author_date,
        concerned: is_concerned(p, modules),
        scored: None,
        error: None,
    };
    if rec.concerned {
        match score_patch(p, bundle, &cfg.triage_options()) {
            Ok(s) => rec.scored = Some(s),
            Err(e) => rec.error = Some(e.to_string()),
        }
    }
    rec
}

/// Scores stored patches in `window` and records the results.
pub fn analyze(
    cfg: &Config,
    bundle: &Bundle,
    window: Option<&MonitorWindow>,
) -> Result<AnalyzeSummary, AppError> {
    let store = open_store(cfg)?;
    let modules = load_modules(cfg)?;
    let records: Vec<AnalysisRecord> = store
        .patches_in(window)?
        .iter()
        .map(|p| analyze_patch(p, &modules, bundle, cfg))
        .collect();
    store.add_analyses(&records)?;
    Ok(AnalyzeSummary {
        analyzed: records.len(),
        concerned: records.iter().filter(|r| r.concerned).count(),
        recommended: records.iter().filter(|r| r.recommended()).count(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub funnel: Funnel,
    pub report: String,
}

/// Scores the stored patches in `window` (all of them without one) and
/// renders the report, funnel included.
pub fn predict(
    cfg: &Config,
    bundle: &Bundle,
    window: Option<MonitorWindow>,
    format: ReportFormat,
) -> Result<Prediction, AppError> {
    analyze(cfg, bundle, window.as_ref())?;
    let store = open_store(cfg)?;
    let records = store.analyses_in(window.as_ref())?;
    let funnel = store.funnel(window.as_ref())?;
    let scored: Vec<_> = records.into_iter().filter_map(|r| r.scored).collect();
    let report = render_report(&scored, &funnel, window.as_ref(), format);
    Ok(Prediction { funnel, report })
}

/// Reviewer state of one recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeedbackStatus {
    Pending,
    Accepted,
    Rejected { reason: ReasonCategory },
}

impl FeedbackStatus {
    pub fn of(rec: Option<&FeedbackRecord>) -> Self {
        match rec.map(|r| (r.verdict, r.reason)) {
            None => FeedbackStatus::Pending,
            Some((Verdict::Accepted, _)) => FeedbackStatus::Accepted,
            Some((Verdict::Rejected, reason)) => FeedbackStatus::Rejected {
                reason: reason.unwrap_or(ReasonCategory::Other),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationView {
    pub sha: String,
    pub short_sha: String,
    pub subject: String,
    pub author_date: String,
    pub raw_score: f64,
    pub final_score: f64,
    pub cc_stable: bool,
    pub paths: Vec<String>,
    pub feedback: FeedbackStatus,
}

fn short(sha: &str) -> String {
    sha.chars().take(12).collect()
}

/// Recommended patches in `window`, best first, with reviewer status.
pub fn recommendations(
    cfg: &Config,
    window: Option<&MonitorWindow>,
) -> Result<Vec<RecommendationView>, AppError> {
    let store = open_store(cfg)?;
    let scored: Vec<_> = store
        .analyses_in(window)?
        .into_iter()
        .filter_map(|r| r.scored)
        .collect();
    let latest = store.feedback_latest()?;
    Ok(ranked(&scored)
        .into_iter()
        .map(|s| RecommendationView {
            sha: s.sha.clone(),
            short_sha: short(&s.sha),
            subject: s.subject.clone(),
            author_date: to_iso(s.author_date),
            raw_score: s.raw_score,
            final_score: s.final_score,
            cc_stable: s.cc_stable,
            paths: s.paths.clone(),
            feedback: FeedbackStatus::of(latest.get(&s.sha)),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchDetail {
    pub sha: String,
    pub short_sha: String,
    pub author_name: String,
    pub author_email: String,
    pub author_date: String,
    pub subject: String,
    pub message: String,
    pub paths: Vec<String>,
    pub diff: String,
    pub concerned: Option<bool>,
    pub raw_score: Option<f64>,
    pub final_score: Option<f64>,
    pub cc_stable: Option<bool>,
    pub recommended: Option<bool>,
    pub feedback: FeedbackStatus,
}

pub fn patch_detail(cfg: &Config, sha: &str) -> Result<PatchDetail, AppError> {
    let store = open_store(cfg)?;
    let patch = store
        .patch(sha)?
        .ok_or_else(|| AppError::not_found("unknown_sha", format!("unknown sha {sha}")))?;
    let analysis = store.analyses()?.remove(sha);
    let scored = analysis.as_ref().and_then(|a| a.scored.as_ref());
    let latest = store.feedback_latest()?;
    let c = &patch.commit;
    Ok(PatchDetail {
        sha: c.sha.clone(),
        short_sha: short(&c.sha),
        author_name: c.author_name.clone(),
        author_email: c.author_email.clone(),
        author_date: to_iso(c.author_date),
        subject: c.subject.clone(),
        message: c.message(),
        paths: changed_paths(&patch).into_iter().collect(),
        diff: render_diff(&patch.files),
        concerned: analysis.as_ref().map(|a| a.concerned),
        raw_score: scored.map(|s| s.raw_score),
        final_score: scored.map(|s| s.final_score),
        cc_stable: scored.map(|s| s.cc_stable),
        recommended: scored.map(|s| s.recommended),
        feedback: FeedbackStatus::of(latest.get(sha)),
    })
}

/// A verdict as submitted, before the sha and time are attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackInput {
    pub verdict: Verdict,
    #[serde(default)]
    pub reason: Option<ReasonCategory>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub reviewer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub sha: String,
    pub label: FeedbackLabel,
    pub superseded: bool,
    pub feedback: FeedbackStatus,
}

/// Appends a verdict for a stored patch. Callers serialize writers.
pub fn add_feedback(
    cfg: &Config,
    sha: &str,
    input: FeedbackInput,
    now: i64,
) -> Result<FeedbackAck, AppError> {
    let store = open_store(cfg)?;
    let known: BTreeSet<String> = store.patches()?.into_iter().map(|p| p.commit.sha).collect();
    let rec = FeedbackRecord {
        sha: sha.to_owned(),
        verdict: input.verdict,
        reason: input.reason,
        note: input.note,
        reviewer: input.reviewer,
        ts: now,
    };
    let status = FeedbackStatus::of(Some(&rec));
    let Acknowledgment {
        sha,
        label,
        superseded,
    } = record_feedback(rec, &mut store.feedback()?, |s| known.contains(s))?;
    Ok(FeedbackAck {
        sha,
        label,
        superseded,
        feedback: status,
    })
}

pub fn stats(cfg: &Config, window: Option<&MonitorWindow>) -> Result<Funnel, AppError> {
    open_store(cfg)?.funnel(window)
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledPatch>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::bad_request("invalid_corpus", format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                AppError::bad_request(
                    "invalid_corpus",
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })
        })
        .collect()
}

pub fn write_corpus(path: &Path, corpus: &[LabeledPatch]) -> Result<(), AppError> {
    let mut text = String::new();
    for lp in corpus {
        text.push_str(&serde_json::to_string(lp)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub corpus_size: usize,
    pub positives: usize,
    pub msg_vocab: usize,
    pub code_vocab: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub holdout: Option<Metrics>,
    pub params_sha256: String,
}

fn swap_into_place(staging: &Path, out: &Path) -> Result<(), AppError> {
    let previous = out.with_extension("previous");
    if previous.exists() {
        fs::remove_dir_all(&previous)?;
    }
    if out.exists() {
        fs::rename(out, &previous)?;
    }
    fs::rename(staging, out)?;
    if previous.exists() {
        fs::remove_dir_all(&previous)?;
    }
    Ok(())
}

/// Trains on `corpus` and installs the bundle at `out`. The caller holds the
/// store's training lock.
pub fn train_locked(
    cfg: &Config,
    corpus: &[LabeledPatch],
    out: &Path,
) -> Result<TrainSummary, AppError> {
    let m = &cfg.model;
    let (vocab_msg, vocab_code, encoded) =
        prepare_corpus(corpus, &m.encode, m.min_freq_msg, m.min_freq_code)?;
    let (params, log) = classifier::train(&encoded, vocab_msg.len(), vocab_code.len(), m)?;
    let staging = out.with_extension("staging");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let manifest = save_model(&params, m, &vocab_msg, &vocab_code, &staging)?;
    swap_into_place(&staging, out)?;
    let last = log.last();
    Ok(TrainSummary {
        out: out.to_owned(),
        corpus_size: corpus.len(),
        positives: corpus.iter().filter(|lp| lp.label == Label::BugFix).count(),
        msg_vocab: vocab_msg.len(),
        code_vocab: vocab_code.len(),
        epochs: log.len(),
        final_loss: last.map_or(f64::NAN, |l| l.train_loss),
        holdout: last.and_then(|l| l.holdout),
        params_sha256: manifest.checksums.params,
    })
}

pub fn lock_training(cfg: &Config) -> Result<TrainLock, AppError> {
    Ok(TrainLock::acquire(&cfg.store_dir)?)
}

pub fn train(cfg: &Config, corpus_path: &Path, out: &Path) -> Result<TrainSummary, AppError> {
    let corpus = read_corpus(corpus_path)?;
    let _lock = lock_training(cfg)?;
    train_locked(cfg, &corpus, out)
}

/// The base corpus plus every stored patch that has a verdict, with the
/// verdicts applied on top.
pub fn retraining_corpus(cfg: &Config) -> Result<Vec<LabeledPatch>, AppError> {
    let mut base = match &cfg.corpus_path {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    };
    let store = open_store(cfg)?;
    let records = store.feedback()?.records()?;
    let labels = feedback_labels(&records);
    let in_base: BTreeSet<String> = base.iter().map(|lp| lp.patch.commit.sha.clone()).collect();
    let reviewed: BTreeSet<&str> = labels.iter().map(|(s, _)| s.as_str()).collect();
    for p in store.patches()? {
        if reviewed.contains(p.commit.sha.as_str()) && !in_base.contains(&p.commit.sha) {
            // Placeholder label; the verdict replaces or drops it below.
            base.push(LabeledPatch {
                patch: p,
                label: Label::NonBugFix,
                source: LabelSource::StableRef,
            });
        }
    }
    Ok(assemble_retraining_corpus(&base, &labels))
}

pub fn retrain_locked(cfg: &Config, out: &Path) -> Result<TrainSummary, AppError> {
    let corpus = retraining_corpus(cfg)?;
    train_locked(cfg, &corpus, out)
}

pub fn retrain(cfg: &Config, out: &Path) -> Result<TrainSummary, AppError> {
    let _lock = lock_training(cfg)?;
    retrain_locked(cfg, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub size: usize,
    pub positives: usize,
    pub threshold: f64,
    pub revision_enabled: bool,
    pub model: Metrics,
    pub keyword_baseline: Metrics,
}

/// Model and keyword-baseline metrics on a labelled corpus.
pub fn eval(
    cfg: &Config,
    bundle: &Bundle,
    corpus: &[LabeledPatch],
    revision: bool,
) -> Result<EvalReport, AppError> {
    let mut opts = cfg.triage_options();
    opts.revision_enabled = revision && cfg.revision_enabled;
    Ok(EvalReport {
        size: corpus.len(),
        positives: corpus.iter().filter(|lp| lp.label == Label::BugFix).count(),
        threshold: opts.threshold,
        revision_enabled: opts.revision_enabled,
        model: evaluate_patches(corpus, bundle, &opts)?,
        keyword_baseline: KeywordBaseline::new(&cfg.keyword_set).evaluate(corpus),
    })
}

/// Labels the stored patches from the stable log, label file and verdicts.
pub fn label(cfg: &Config) -> Result<Vec<LabeledPatch>, AppError> {
    let store = open_store(cfg)?;
    let stable = match &cfg.stable_log_path {
        Some(p) => scan_stable_refs(&fs::read_to_string(p)?),
        None => BTreeSet::new(),
    };
    let entries = match &cfg.label_file_path {
        Some(p) => parse_label_file(&fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let labels = feedback_labels(&store.feedback()?.records()?);
    let excluded: BTreeSet<&str> = labels
        .iter()
        .filter(|(_, l)| *l == FeedbackLabel::Excluded)
        .map(|(s, _)| s.as_str())
        .collect();
    let verdicts: Vec<(String, Label)> = labels
        .iter()
        .filter_map(|(sha, l)| Some((sha.clone(), l.as_label()?)))
        .collect();
    let patches: Vec<Patch> = store
        .patches()?
        .into_iter()
        .filter(|p| !excluded.contains(p.commit.sha.as_str()))
        .collect();
    Ok(build_corpus(&patches, &stable, &entries, &verdicts)?)
}
