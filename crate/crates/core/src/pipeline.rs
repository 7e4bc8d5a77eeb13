//! Predicting-stage orchestration: score revision for stable-tagged patches,
//! thresholding, funnel accounting, reports, and the keyword baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::classifier::Metrics;
use crate::feedback::{FeedbackRecord, ReasonCategory, Verdict};
use crate::filter::{is_concerned, ModuleList};
use crate::ingest::{to_iso, Label, LabeledPatch, MonitorWindow};
use crate::patch::{changed_paths, Patch};
use crate::preprocess::tokenize_message;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BOOST_FLOOR: f64 = 0.95;
pub const CC_STABLE: &str = "cc: stable@vger.kernel.org";

/// Trailer lines that raise a patch's score, e.g. `Cc: stable@vger.kernel.org`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRevision {
    /// `tag: address` patterns, matched case-insensitively.
    pub patterns: Vec<String>,
    pub boost_floor: f64,
}

impl Default for ScoreRevision {
    fn default() -> Self {
        ScoreRevision {
            patterns: vec![CC_STABLE.to_owned()],
            boost_floor: DEFAULT_BOOST_FLOOR,
        }
    }
}

fn line_matches(line: &str, pattern: &str) -> bool {
    let line = line.trim_start().to_lowercase();
    let pattern = pattern.to_lowercase();
    let (tag, address) = match pattern.split_once(':') {
        Some((t, a)) => (t.trim(), a.trim()),
        None => return line.starts_with(pattern.trim()),
    };
    let Some(rest) = line.strip_prefix(tag).and_then(|r| r.strip_prefix(':')) else {
        return false;
    };
    let rest = rest.trim_start();
    match rest.strip_prefix('<') {
        Some(inner) => inner.starts_with(address),
        None => rest.starts_with(address),
    }
}

impl ScoreRevision {
    pub fn flags(&self, message: &str) -> bool {
        message
            .lines()
            .any(|l| self.patterns.iter().any(|p| line_matches(l, p)))
    }
}

/// True when some message line is a `Cc: stable@vger.kernel.org` trailer.
pub fn detect_cc_stable(message: &str) -> bool {
    message.lines().any(|l| line_matches(l, CC_STABLE))
}

pub fn revise_score(raw: f64, flagged: bool, boost_floor: f64) -> f64 {
    if flagged {
        raw.max(boost_floor)
    } else {
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatch {
    pub sha: String,
    pub subject: String,
    pub author_date: i64,
    pub paths: Vec<String>,
    pub raw_score: f64,
    pub cc_stable: bool,
    pub final_score: f64,
    pub recommended: bool,
}

/// Analyzed → concerned → recommended → accepted/rejected accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub analyzed: usize,
    pub concerned: usize,
    pub recommended: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejected_by_reason: BTreeMap<ReasonCategory, usize>,
}

impl Default for Funnel {
    fn default() -> Self {
        Funnel {
            analyzed: 0,
            concerned: 0,
            recommended: 0,
            accepted: 0,
            rejected: 0,
            rejected_by_reason: ReasonCategory::ALL.iter().map(|r| (*r, 0)).collect(),
        }
    }
}

impl Funnel {
    /// Adds verdicts for recommended shas; the latest record per sha counts.
    pub fn apply_feedback<'a, I>(&mut self, recommended: &[&str], latest: I)
    where
        I: IntoIterator<Item = &'a FeedbackRecord>,
    {
        let latest: BTreeMap<&str, &FeedbackRecord> =
            latest.into_iter().map(|r| (r.sha.as_str(), r)).collect();
        for sha in recommended {
            let Some(r) = latest.get(sha) else { continue };
            match (r.verdict, r.reason) {
                (Verdict::Accepted, _) => self.accepted += 1,
                (Verdict::Rejected, reason) => {
                    self.rejected += 1;
                    *self
                        .rejected_by_reason
                        .entry(reason.unwrap_or(ReasonCategory::Other))
                        .or_default() += 1;
                }
            }
        }
    }

    /// Broken invariants, empty when the funnel is consistent.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.concerned > self.analyzed {
            v.push(format!(
                "concerned {} > analyzed {}",
                self.concerned, self.analyzed
            ));
        }
        if self.recommended > self.concerned {
            v.push(format!(
                "recommended {} > concerned {}",
                self.recommended, self.concerned
            ));
        }
        if self.accepted + self.rejected > self.recommended {
            v.push(format!(
                "accepted {} + rejected {} > recommended {}",
                self.accepted, self.rejected, self.recommended
            ));
        }
        let by_reason: usize = self.rejected_by_reason.values().sum();
        if by_reason != self.rejected {
            v.push(format!(
                "rejected_by_reason sums to {by_reason}, rejected is {}",
                self.rejected
            ));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOptions {
    pub threshold: f64,
    pub revision_enabled: bool,
    pub revision: ScoreRevision,
}

impl Default for TriageOptions {
    fn default() -> Self {
        TriageOptions {
            threshold: DEFAULT_THRESHOLD,
            revision_enabled: true,
            revision: ScoreRevision::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Triage {
    /// Concerned patches in input order.
    pub scored: Vec<ScoredPatch>,
    pub funnel: Funnel,
    pub filtered_out: Vec<String>,
    /// Concerned patches that could not be scored.
    pub failures: Vec<(String, String)>,
}

pub fn score_patch(
    patch: &Patch,
    bundle: &Bundle,
    opts: &TriageOptions,
) -> Result<ScoredPatch, crate::classifier::ModelError> {
    let raw_score = bundle.score(patch)?;
    let cc_stable = opts.revision.flags(&patch.commit.message());
    let final_score = if opts.revision_enabled {
        revise_score(raw_score, cc_stable, opts.revision.boost_floor)
    } else {
        raw_score
    };
    Ok(ScoredPatch {
        sha: patch.commit.sha.clone(),
        subject: patch.commit.subject.clone(),
        author_date: patch.commit.author_date,
        paths: changed_paths(patch).into_iter().collect(),
        raw_score,
        cc_stable,
        final_score,
        recommended: final_score >= opts.threshold,
    })
}

/// Filter, score, revise and threshold a batch.
pub fn triage(
    patches: &[Patch],
    modules: &ModuleList,
    bundle: &Bundle,
    opts: &TriageOptions,
) -> Triage {
    let mut out = Triage::default();
    out.funnel.analyzed = patches.len();
    for p in patches {
        if !is_concerned(p, modules) {
            out.filtered_out.push(p.commit.sha.clone());
            continue;
        }
        out.funnel.concerned += 1;
        match score_patch(p, bundle, opts) {
            Ok(s) => {
                out.funnel.recommended += usize::from(s.recommended);
                out.scored.push(s);
            }
            Err(e) => out.failures.push((p.commit.sha.clone(), e.to_string())),
        }
    }
    out
}

/// Confusion counts of the model (optionally revised) on labelled patches.
pub fn evaluate_patches(
    corpus: &[LabeledPatch],
    bundle: &Bundle,
    opts: &TriageOptions,
) -> Result<Metrics, crate::classifier::ModelError> {
    let pairs = corpus
        .iter()
        .map(|lp| {
            Ok((
                score_patch(&lp.patch, bundle, opts)?.recommended,
                lp.label == Label::BugFix,
            ))
        })
        .collect::<Result<Vec<_>, crate::classifier::ModelError>>()?;
    Ok(Metrics::from_predictions(pairs))
}

/// Flags messages containing any configured keyword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordBaseline {
    keywords: Vec<Vec<String>>,
}

pub const DEFAULT_KEYWORDS: [&str; 10] = [
    "fix",
    "fixes",
    "fixed",
    "bug",
    "leak",
    "oops",
    "panic",
    "overflow",
    "use-after-free",
    "null",
];

impl Default for KeywordBaseline {
    fn default() -> Self {
        Self::new(DEFAULT_KEYWORDS)
    }
}

impl KeywordBaseline {
    /// Multi-token keywords (`use-after-free`) match as contiguous token runs.
    pub fn new<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let keywords = keywords
            .into_iter()
            .map(|k| tokenize_message(k.as_ref()))
            .filter(|k| !k.is_empty())
            .collect();
        KeywordBaseline { keywords }
    }

    pub fn score(&self, message: &str) -> u8 {
        let tokens = tokenize_message(message);
        let hit = self
            .keywords
            .iter()
            .any(|k| tokens.windows(k.len()).any(|w| w == k.as_slice()));
        u8::from(hit)
    }

    pub fn evaluate(&self, corpus: &[LabeledPatch]) -> Metrics {
        Metrics::from_predictions(corpus.iter().map(|lp| {
            (
                self.score(&lp.patch.commit.message()) == 1,
                lp.label == Label::BugFix,
            )
        }))
    }
}

pub fn keyword_baseline_score(message: &str) -> u8 {
    KeywordBaseline::default().score(message)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Serialize)]
struct WindowView {
    #[serde(skip_serializing_if = "Option::is_none")]
    since: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    until: Option<String>,
}

#[derive(Serialize)]
struct RecommendationView<'a> {
    sha: &'a str,
    subject: &'a str,
    raw_score: f64,
    final_score: f64,
    cc_stable: bool,
    paths: &'a [String],
}

#[derive(Serialize)]
struct ReportView<'a> {
    window: WindowView,
    funnel: &'a Funnel,
    recommendations: Vec<RecommendationView<'a>>,
}

/// Recommended patches by descending final score, then sha.
pub fn recommendations(scored: &[ScoredPatch]) -> Vec<&ScoredPatch> {
    let mut recs: Vec<&ScoredPatch> = scored.iter().filter(|s| s.recommended).collect();
    recs.sort_by(|a, b| {
        b.final_score
            .total_cmp(&a.final_score)
            .then_with(|| a.sha.cmp(&b.sha))
    });
    recs
}

pub fn render_report(
    scored: &[ScoredPatch],
    funnel: &Funnel,
    window: Option<&MonitorWindow>,
    format: ReportFormat,
) -> String {
    let recs = recommendations(scored);
    match format {
        ReportFormat::Json => {
            let view = ReportView {
                window: WindowView {
                    since: window.map(|w| to_iso(w.since)),
                    until: window.map(|w| to_iso(w.until)),
                },
                funnel,
                recommendations: recs
                    .iter()
                    .map(|s| RecommendationView {
                        sha: &s.sha,
                        subject: &s.subject,
                        raw_score: s.raw_score,
                        final_score: s.final_score,
                        cc_stable: s.cc_stable,
                        paths: &s.paths,
                    })
                    .collect(),
            };
            serde_json::to_string_pretty(&view).expect("report serializes") + "\n"
        }
        ReportFormat::Markdown => {
            let mut out = String::from("# Patch recommendations\n\n");
            if let Some(w) = window {
                let _ = writeln!(out, "Window: {} .. {}\n", to_iso(w.since), to_iso(w.until));
            }
            out.push_str("## Funnel\n\n| stage | count |\n|---|---|\n");
            for (stage, n) in [
                ("analyzed", funnel.analyzed),
                ("concerned", funnel.concerned),
                ("recommended", funnel.recommended),
                ("accepted", funnel.accepted),
                ("rejected", funnel.rejected),
            ] {
                let _ = writeln!(out, "| {stage} | {n} |");
            }
            for (reason, n) in &funnel.rejected_by_reason {
                let _ = writeln!(out, "| rejected: {reason} | {n} |");
            }
            out.push_str("\n## Recommendations\n\n");
            if recs.is_empty() {
                out.push_str("No patches recommended.\n");
            }
            for s in recs {
                let _ = writeln!(
                    out,
                    "- `{}` {}\n  - score {:.4} (raw {:.4}){}\n  - paths: {}",
                    &s.sha[..s.sha.len().min(12)],
                    s.subject,
                    s.final_score,
                    s.raw_score,
                    if s.cc_stable { ", cc-stable" } else { "" },
                    s.paths.join(", ")
                );
            }
            out
        }
    }
}
