//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Set `PATCHBOT_KERNEL_REPO` to a kernel clone to run the parser
//! oracle on real history instead of the generated repository.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use patchbot::store::funnel_of;
use patchbot_core::bundle::{load_model, params_to_bytes, save_model};
use patchbot_core::classifier::{backward, evaluate, forward, train_with_holdout};
use patchbot_core::feedback::{
    assemble_retraining_corpus, feedback_labels, FeedbackRecord, ReasonCategory, Verdict,
};
use patchbot_core::filter::ModuleList;
use patchbot_core::ingest::{show_commit, Label, LabelSource, LabeledPatch};
use patchbot_core::patch::{parse_patch, Patch};
use patchbot_core::pipeline::{evaluate_patches, triage, Funnel, TriageOptions, CC_STABLE};
use patchbot_core::preprocess::{encode_labeled, encode_patch, prepare_corpus, write_intermediate};
use patchbot_testkit::gitrepo::{build_history, git, numstat};
use patchbot_testkit::synth::{
    planted_config, planted_corpus, random_bundle, random_encoded, random_params, random_patch,
    tiny_config, PLANTED_TOKEN, TINY_CODE_VOCAB, TINY_MSG_VOCAB,
};
use patchbot_testkit::{numstat_mismatches, parsed_numstat, reference};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_config();
    let l2 = 1e-3;
    let mut worst: f64 = 0.0;
    let instances = 12;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let params = random_params(&cfg, TINY_MSG_VOCAB, TINY_CODE_VOCAB, 1.0, &mut rng);
        let batch: Vec<_> = (0..4)
            .map(|_| random_encoded(&cfg.encode, TINY_MSG_VOCAB, TINY_CODE_VOCAB, &mut rng))
            .collect();
        let (_, grads) = backward(&batch, &params, l2).map_err(|e| e.to_string())?;
        let numeric = reference::numeric_gradient(&batch, &params, l2, 1e-5);
        check(grads.groups().len() == numeric.len(), || {
            "parameter group count differs".into()
        })?;
        for (g, (name, num)) in grads.groups().iter().zip(&numeric) {
            for (a, n) in g.values.iter().zip(num) {
                let rel = (a - n).abs() / a.abs().max(1.0);
                worst = worst.max(rel);
                check(rel < 1e-4, || {
                    format!("seed {seed} group {name}: analytic {a} numeric {n}")
                })?;
            }
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "{instances} instances, every group, max relative error {worst:.1e}, {took:.2?}"
    ))
}

fn forward_oracle() -> Outcome {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for _ in 0..8 {
        let params = random_params(&cfg, TINY_MSG_VOCAB, TINY_CODE_VOCAB, 1.0, &mut rng);
        for _ in 0..5 {
            let e = random_encoded(&cfg.encode, TINY_MSG_VOCAB, TINY_CODE_VOCAB, &mut rng);
            let diff = (forward(&e, &params).map_err(|e| e.to_string())?
                - reference::forward(&e, &params))
            .abs();
            worst = worst.max(diff);
            n += 1;
        }
    }
    check(worst <= 1e-12, || format!("max difference {worst:e}"))?;
    Ok(format!("{n} patches, max |difference| {worst:.1e}"))
}

struct Planted {
    bundle: patchbot_core::bundle::Bundle,
}

fn planted_signal(out: &mut Option<Planted>) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train_set = planted_corpus(200, &mut rng);
    let eval_set = planted_corpus(100, &mut rng);
    let cfg = planted_config();
    check(cfg.epochs <= 20, || "more than 20 epochs".into())?;
    let (vm, vc, enc) =
        prepare_corpus(&train_set, &cfg.encode, cfg.min_freq_msg, cfg.min_freq_code)
            .map_err(|e| e.to_string())?;
    let ev = encode_labeled(&eval_set, &vm, &vc, &cfg.encode).map_err(|e| e.to_string())?;
    let run = || train_with_holdout(&enc, &ev, vm.len(), vc.len(), &cfg).map_err(|e| e.to_string());
    let (first, log) = run()?;
    let (second, _) = run()?;
    check(params_to_bytes(&first) == params_to_bytes(&second), || {
        "two seeded runs differ".into()
    })?;
    let m = evaluate(&first, &ev, 0.5).map_err(|e| e.to_string())?;
    let reached = log
        .iter()
        .find(|l| l.holdout.is_some_and(|h| h.accuracy >= 0.95))
        .map(|l| l.epoch);
    let took = start.elapsed();
    check(m.accuracy >= 0.95, || {
        format!("eval accuracy {:.3} after {} epochs", m.accuracy, log.len())
    })?;
    check(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    *out = Some(Planted {
        bundle: patchbot_core::bundle::Bundle {
            params: first,
            config: cfg,
            vocab_msg: vm,
            vocab_code: vc,
        },
    });
    Ok(format!(
        "eval accuracy {:.3} after {} epochs (>= 0.95 from epoch {}), two runs bit-identical, {took:.2?}",
        m.accuracy,
        log.len(),
        reached.map_or("-".into(), |e| e.to_string())
    ))
}

fn parser_oracle() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (repo, shas, source) = match std::env::var("PATCHBOT_KERNEL_REPO") {
        Ok(path) => {
            let repo = Path::new(&path).to_owned();
            let listing = git(
                &repo,
                &["log", "--no-merges", "-n", "100", "--format=%H"],
                &[],
            );
            let shas: Vec<String> = listing.lines().map(str::to_owned).collect();
            (repo, shas, format!("kernel clone {path}"))
        }
        Err(_) => {
            let commits = build_history(tmp.path(), 120, 17);
            let shas = commits.into_iter().map(|(s, _)| s).collect();
            (
                tmp.path().to_owned(),
                shas,
                "generated repository (PATCHBOT_KERNEL_REPO unset)".to_owned(),
            )
        }
    };
    check(shas.len() >= 100, || format!("only {} commits", shas.len()))?;
    let mut files = 0;
    for sha in &shas {
        let text = show_commit(&repo, sha).map_err(|e| e.to_string())?;
        let patch = parse_patch(&text).map_err(|e| format!("{sha}: {e}"))?;
        let parsed = parsed_numstat(&patch);
        let bad = numstat_mismatches(&parsed, &numstat(&repo, sha));
        check(bad.is_empty(), || format!("{sha}: {bad:?}"))?;
        files += parsed.len();
    }
    Ok(format!(
        "{} commits, {files} file entries, 100% agreement with git numstat; {source}",
        shas.len()
    ))
}

fn revision_direction(planted: Option<&Planted>) -> Outcome {
    let bundle = &planted.ok_or("planted model unavailable")?.bundle;
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let mut set = Vec::new();
    let fix = |patch, set: &mut Vec<LabeledPatch>| {
        set.push(LabeledPatch {
            patch,
            label: Label::BugFix,
            source: LabelSource::CorpusFile,
        })
    };
    for _ in 0..40 {
        fix(random_patch(&mut rng, &[PLANTED_TOKEN]), &mut set);
    }
    // True fixes the model cannot see, flagged only by the stable tag.
    for _ in 0..20 {
        let mut p = random_patch(&mut rng, &[]);
        p.commit.body.push_str("\nCc: stable@vger.kernel.org");
        fix(p, &mut set);
    }
    for _ in 0..60 {
        let patch = random_patch(&mut rng, &[]);
        set.push(LabeledPatch {
            patch,
            label: Label::NonBugFix,
            source: LabelSource::CorpusFile,
        });
    }
    let opts = TriageOptions::default();
    let tagged: Vec<&LabeledPatch> = set
        .iter()
        .filter(|lp| opts.revision.flags(&lp.patch.commit.message()))
        .collect();
    let fixes = set.iter().filter(|lp| lp.label == Label::BugFix).count();
    check(tagged.iter().all(|lp| lp.label == Label::BugFix), || {
        "a tagged patch is not a fix".into()
    })?;
    check(tagged.len() * 5 >= fixes, || {
        format!("{} tagged of {fixes} fixes", tagged.len())
    })?;
    let below = tagged
        .iter()
        .filter(|lp| bundle.score(&lp.patch).is_ok_and(|s| s < opts.threshold))
        .count();
    check(below > 0, || "no tagged fix scores below threshold".into())?;
    let with = evaluate_patches(&set, bundle, &opts).map_err(|e| e.to_string())?;
    let without = evaluate_patches(
        &set,
        bundle,
        &TriageOptions {
            revision_enabled: false,
            ..opts
        },
    )
    .map_err(|e| e.to_string())?;
    check(with.recall > without.recall, || {
        format!("recall {} vs {}", with.recall, without.recall)
    })?;
    check(with.precision >= without.precision, || {
        format!("precision {} vs {}", with.precision, without.precision)
    })?;
    Ok(format!(
        "{} of {fixes} fixes tagged, {below} below threshold; recall {:.3} -> {:.3}, precision {:.3} -> {:.3}",
        tagged.len(),
        without.recall,
        with.recall,
        without.precision,
        with.precision
    ))
}

fn funnel_conservation() -> Outcome {
    const PREFIXES: &[&str] = &[
        "kernel",
        "mm",
        "fs",
        "fs/ext4",
        "drivers/net",
        "net",
        "arch/x86",
        "sound",
        "block",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let pool: Vec<Patch> = (0..300)
        .map(|i| {
            let mut p = random_patch(&mut rng, &[]);
            if i % 3 == 0 {
                p.commit.body.push_str(&format!("\n{CC_STABLE}"));
            }
            p
        })
        .collect();
    let bundle = random_bundle(&pool, 1.0, &mut rng);
    for b in 0..1000 {
        let n = rng.random_range(0..25);
        let batch: Vec<Patch> = pool.choose_multiple(&mut rng, n).cloned().collect();
        let modules = if rng.random_bool(0.1) {
            ModuleList::disabled()
        } else {
            let k = rng.random_range(0..4);
            ModuleList::new(PREFIXES.choose_multiple(&mut rng, k).copied())
                .map_err(|e| e.to_string())?
        };
        let opts = TriageOptions {
            threshold: rng.random_range(0.3..0.6),
            revision_enabled: rng.random(),
            ..Default::default()
        };
        let mut t = triage(&batch, &modules, &bundle, &opts);
        let f = &t.funnel;
        check(
            f.analyzed == batch.len() && f.analyzed == f.concerned + t.filtered_out.len(),
            || {
                format!(
                    "batch {b}: analyzed {} concerned {} filtered {}",
                    f.analyzed,
                    f.concerned,
                    t.filtered_out.len()
                )
            },
        )?;
        check(f.recommended <= f.concerned, || format!("batch {b}: {f:?}"))?;
        let recommended: Vec<&str> = t
            .scored
            .iter()
            .filter(|s| s.recommended)
            .map(|s| s.sha.as_str())
            .collect();
        let mut records = Vec::new();
        for s in t.scored.iter().filter(|s| s.recommended) {
            if !rng.random_bool(0.6) {
                continue;
            }
            let verdict = if rng.random() {
                Verdict::Accepted
            } else {
                Verdict::Rejected
            };
            let reason = (verdict == Verdict::Rejected)
                .then(|| *ReasonCategory::ALL.choose(&mut rng).unwrap());
            records.push(FeedbackRecord {
                sha: s.sha.clone(),
                verdict,
                reason,
                note: String::new(),
                reviewer: String::new(),
                ts: 0,
            });
        }
        t.funnel.apply_feedback(&recommended, &records);
        check(t.funnel.violations().is_empty(), || {
            format!("batch {b}: {:?}", t.funnel.violations())
        })?;
    }

    // The published February run: 5142 analysed, 1646 concerned, 151
    // recommended, 102 accepted, 49 rejected as 33 + 7 + 6 + 2 + 1.
    let reasons = [
        (ReasonCategory::NonBugFix, 33),
        (ReasonCategory::UnrelatedModule, 7),
        (ReasonCategory::NotRelevantToBaseline, 6),
        (ReasonCategory::MissingDependency, 2),
        (ReasonCategory::Other, 1),
    ];
    let mut fig = Funnel {
        analyzed: 5142,
        concerned: 1646,
        recommended: 151,
        accepted: 102,
        rejected: 49,
        ..Default::default()
    };
    fig.rejected_by_reason.extend(reasons);
    check(fig.violations().is_empty(), || {
        format!("{:?}", fig.violations())
    })?;
    check(fig.accepted + fig.rejected == fig.recommended, || {
        "151 != 102 + 49".into()
    })?;

    // The same numbers rebuilt from per-patch analyses and verdicts.
    let mut records = Vec::new();
    for i in 0..5142u32 {
        let p = common::simple_patch(i + 1, "fs/a.c", "s", "b", i64::from(i));
        let score = match i {
            0..151 => Some((0.9, false, 0.9)),
            151..1646 => Some((0.1, false, 0.1)),
            _ => None,
        };
        records.push(common::analysis(&p, score, 0.5));
    }
    let mut verdicts: Vec<(Verdict, Option<ReasonCategory>)> = vec![(Verdict::Accepted, None); 102];
    for (r, n) in reasons {
        verdicts.extend(std::iter::repeat_n((Verdict::Rejected, Some(r)), n));
    }
    let feedback: Vec<FeedbackRecord> = records
        .iter()
        .zip(&verdicts)
        .map(|(r, (verdict, reason))| FeedbackRecord {
            sha: r.sha.clone(),
            verdict: *verdict,
            reason: *reason,
            note: String::new(),
            reviewer: String::new(),
            ts: 0,
        })
        .collect();
    let rebuilt = funnel_of(&records, &feedback);
    check(rebuilt == fig, || format!("rebuilt {rebuilt:?}"))?;
    Ok("1000 random batches conserved; 5142/1646/151 with 151 = 102 + 49 and 49 = 33+7+6+2+1 holds".into())
}

fn deployment_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_dir = work.path().join("corpus");
    fs::create_dir_all(&corpus_dir).map_err(|e| e.to_string())?;
    let corpus = planted_corpus(40, &mut rng);
    let cfg = patchbot_core::classifier::ModelConfig {
        embed_dim: 8,
        filters: 4,
        hidden: 8,
        epochs: 2,
        ..Default::default()
    };
    let (vm, vc, enc) = prepare_corpus(&corpus, &cfg.encode, 1, 1).map_err(|e| e.to_string())?;
    write_intermediate(&corpus_dir.join("train.jsonl"), &enc).map_err(|e| e.to_string())?;
    let (params, _) =
        train_with_holdout(&enc, &[], vm.len(), vc.len(), &cfg).map_err(|e| e.to_string())?;
    let bundle_dir = work.path().join("model");
    save_model(&params, &cfg, &vm, &vc, &bundle_dir).map_err(|e| e.to_string())?;
    let fresh = random_patch(&mut rng, &[PLANTED_TOKEN, "brandnewword"]);
    let before = forward(
        &encode_patch(&fresh, &vm, &vc, &cfg.encode).map_err(|e| e.to_string())?,
        &params,
    )
    .map_err(|e| e.to_string())?;
    fs::remove_dir_all(&corpus_dir).map_err(|e| e.to_string())?;
    drop((corpus, enc, vm, vc, params));
    let after = load_model(&bundle_dir)
        .and_then(|b| b.score(&fresh))
        .map_err(|e| e.to_string())?;
    check(before.to_bits() == after.to_bits(), || {
        format!("{before} vs {after}")
    })?;
    Ok(format!(
        "corpus deleted; reloaded bundle scores a new patch bit-identically ({after:.6})"
    ))
}

fn feedback_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let bases = [
        (Label::BugFix, LabelSource::StableRef),
        (Label::NonBugFix, LabelSource::StableRef),
        (Label::BugFix, LabelSource::CorpusFile),
        (Label::NonBugFix, LabelSource::CorpusFile),
        (Label::BugFix, LabelSource::ExpertFeedback),
        (Label::NonBugFix, LabelSource::ExpertFeedback),
    ];
    let mut verdicts = vec![None, Some((Verdict::Accepted, None))];
    verdicts.extend(
        ReasonCategory::ALL
            .iter()
            .map(|r| Some((Verdict::Rejected, Some(*r)))),
    );
    // Expected outcome, spelled out case by case.
    let expected =
        |base: (Label, LabelSource), v: Option<(Verdict, Option<ReasonCategory>)>| match v {
            None => Some(base),
            Some((Verdict::Accepted, _)) => Some((Label::BugFix, LabelSource::ExpertFeedback)),
            Some((Verdict::Rejected, Some(ReasonCategory::NonBugFix))) => {
                Some((Label::NonBugFix, LabelSource::ExpertFeedback))
            }
            Some((Verdict::Rejected, _)) => None,
        };
    let (mut base, mut records, mut want) = (Vec::new(), Vec::new(), Vec::new());
    for b in bases {
        for first in &verdicts {
            for second in &verdicts {
                let patch = random_patch(&mut rng, &[]);
                let sha = patch.commit.sha.clone();
                base.push(LabeledPatch {
                    patch,
                    label: b.0,
                    source: b.1,
                });
                for (ts, v) in [first, second].into_iter().enumerate() {
                    if let Some((verdict, reason)) = v {
                        records.push(FeedbackRecord {
                            sha: sha.clone(),
                            verdict: *verdict,
                            reason: *reason,
                            note: String::new(),
                            reviewer: String::new(),
                            ts: ts as i64,
                        });
                    }
                }
                want.push((sha, expected(b, second.or(*first))));
            }
        }
    }
    let out = assemble_retraining_corpus(&base, &feedback_labels(&records));
    let kept: Vec<(String, Label, LabelSource)> = want
        .iter()
        .filter_map(|(s, w)| w.map(|(l, src)| (s.clone(), l, src)))
        .collect();
    let got: Vec<(String, Label, LabelSource)> = out
        .iter()
        .map(|lp| (lp.patch.commit.sha.clone(), lp.label, lp.source))
        .collect();
    check(got == kept, || {
        "assembled corpus differs from the table".into()
    })?;
    check(out.len() == base.len() - (want.len() - kept.len()), || {
        "size accounting broken".into()
    })?;
    Ok(format!(
        "{} combinations (6 bases x 7 x 7 verdict sequences), {} excluded",
        want.len(),
        want.len() - kept.len()
    ))
}

fn api_contract() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let f = common::contract::seeded();
        let before = common::contract::run(&f).await;
        let restarted = common::app(&f);
        for (uri, body) in common::contract::REPLAYED.iter().zip(&before) {
            let r = common::get(&restarted, uri).await;
            check(&r.text == body, || format!("{uri} changed after restart"))?;
        }
        Ok(format!(
            "7 endpoints, exact bodies, read-your-writes, 400/404/409 paths, {} GETs identical after restart",
            before.len()
        ))
    })
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut planted = None;
    let results = [
        run("gradient oracle", gradient_oracle),
        run("forward oracle", forward_oracle),
        run("planted-signal training", || planted_signal(&mut planted)),
        run("parser oracle", parser_oracle),
        run("revision direction", || {
            revision_direction(planted.as_ref())
        }),
        run("funnel conservation", funnel_conservation),
        run("deployment completeness", deployment_completeness),
        run("feedback semantics", feedback_semantics),
        run("API contract", api_contract),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
