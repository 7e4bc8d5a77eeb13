//! The recorded API fixture: a seeded store, every endpoint, exact bodies.

use std::fs;

use axum::http::StatusCode;
use patchbot::ops;
use patchbot::AppError;
use patchbot_core::bundle::TrainLock;
use patchbot_core::classifier::ModelError;
use patchbot_testkit::gitrepo::{commit_all, init_repo};
use patchbot_testkit::synth::planted_corpus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::*;

const H: i64 = 3600;

fn zero_reasons() -> Value {
    json!({"non_bug_fix": 0, "unrelated_module": 0, "not_relevant_to_baseline": 0, "missing_dependency": 0, "other": 0})
}

fn funnel(
    analyzed: u64,
    concerned: u64,
    recommended: u64,
    accepted: u64,
    rejected: u64,
    reasons: Value,
) -> Value {
    json!({
        "analyzed": analyzed, "concerned": concerned, "recommended": recommended,
        "accepted": accepted, "rejected": rejected, "rejected_by_reason": reasons,
    })
}

fn err(code: &str, detail: &str) -> Value {
    json!({"error": {"code": code, "detail": detail}})
}

#[track_caller]
fn expect(reply: &Reply, status: StatusCode, body: Value) {
    assert_eq!(reply.status, status, "{}", reply.text);
    assert_eq!(reply.json(), body, "{}", reply.text);
}

/// A store with four analysed patches (one unconcerned, one below threshold,
/// one raised by the stable tag), a three-commit repository and a small base
/// corpus for retraining.
pub fn seeded() -> Fixture {
    let f = Fixture::new(json!({
        "corpus_path": "corpus.jsonl",
        "model": {"embed_dim": 4, "filters": 2, "hidden": 4, "epochs": 2, "min_freq_msg": 1, "min_freq_code": 1},
    }));
    let sob = "\n\nSigned-off-by: Ada Dev <ada@example.org>";
    let patches = [
        simple_patch(
            1,
            "fs/ext4/inode.c",
            "ext4: free buffer on error path",
            &format!("Avoid a leak.{sob}"),
            NOW - H,
        ),
        simple_patch(
            2,
            "mm/slab.c",
            "mm: handle empty cache",
            &format!("Cc: stable@vger.kernel.org{sob}"),
            NOW - 2 * H,
        ),
        simple_patch(
            3,
            "drivers/net/foo.c",
            "net: foo: tidy probe",
            &format!("Cleanup.{sob}"),
            NOW - 3 * H,
        ),
        simple_patch(
            4,
            "kernel/fork.c",
            "fork: rename helper",
            &format!("No functional change.{sob}"),
            NOW - 4 * H,
        ),
    ];
    let store = f.store();
    assert_eq!(store.add_patches(&patches).unwrap(), 4);
    let t = f.cfg.threshold;
    store
        .add_analyses(&[
            analysis(&patches[0], Some((0.91, false, 0.91)), t),
            analysis(&patches[1], Some((0.25, true, 0.95)), t),
            analysis(&patches[2], None, t),
            analysis(&patches[3], Some((0.125, false, 0.125)), t),
        ])
        .unwrap();

    let corpus = planted_corpus(30, &mut ChaCha8Rng::seed_from_u64(5));
    ops::write_corpus(&f.dir.path().join("corpus.jsonl"), &corpus).unwrap();

    let repo = &f.cfg.repo_path;
    fs::create_dir_all(repo).unwrap();
    init_repo(repo);
    for (i, path) in ["fs/btrfs/ctree.c", "mm/vmscan.c", "sound/core/pcm.c"]
        .iter()
        .enumerate()
    {
        let file = repo.join(path);
        fs::create_dir_all(file.parent().unwrap()).unwrap();
        fs::write(&file, format!("int v{i};\n")).unwrap();
        commit_all(
            repo,
            &format!("change {i}\n\nfix the thing {i}"),
            NOW - 50 * H + i as i64 * H,
        );
    }
    f
}

pub const REPLAYED: &[&str] = &[
    "/api/recommendations",
    "/api/recommendations?since=2023-11-14T21:00:00Z&until=2023-11-14T22:13:20Z",
    "/api/patches/0000000000000000000000000000000000000001",
    "/api/patches/0000000000000000000000000000000000000003",
    "/api/stats",
    "/api/stats?since=1699999000&until=1700000000",
    "/api/jobs/job-000001",
    "/api/jobs/job-000002",
];

/// Drives every endpoint, asserting status and body; returns the bodies of
/// [`REPLAYED`] at the end.
pub async fn run(f: &Fixture) -> Vec<String> {
    let app = app(f);
    let s1 = sha(1);
    let s2 = sha(2);

    let rec1 = |feedback: Value| {
        json!({
            "sha": s1, "short_sha": "000000000000", "subject": "ext4: free buffer on error path",
            "author_date": "2023-11-14T21:13:20Z", "raw_score": 0.91, "final_score": 0.91, "cc_stable": false,
            "paths": ["fs/ext4/inode.c"], "feedback": feedback,
        })
    };
    let rec2 = |feedback: Value| {
        json!({
            "sha": s2, "short_sha": "000000000000", "subject": "mm: handle empty cache",
            "author_date": "2023-11-14T20:13:20Z", "raw_score": 0.25, "final_score": 0.95, "cc_stable": true,
            "paths": ["mm/slab.c"], "feedback": feedback,
        })
    };
    let pending = json!({"status": "pending"});

    // Recommendations: best final score first, windows on author date.
    expect(
        &get(&app, "/api/recommendations").await,
        StatusCode::OK,
        json!([rec2(pending.clone()), rec1(pending.clone())]),
    );
    expect(
        &get(
            &app,
            "/api/recommendations?since=2023-11-14T21:00:00Z&until=2023-11-14T22:13:20Z",
        )
        .await,
        StatusCode::OK,
        json!([rec1(pending.clone())]),
    );
    expect(
        &get(
            &app,
            "/api/recommendations?since=1700000000&until=1699990000",
        )
        .await,
        StatusCode::BAD_REQUEST,
        err(
            "invalid_window",
            "invalid monitor window: since 1700000000 >= until 1699990000",
        ),
    );
    expect(
        &get(&app, "/api/recommendations?since=1700000000").await,
        StatusCode::BAD_REQUEST,
        err("invalid_window", "since and until go together"),
    );
    expect(
        &get(&app, "/api/stats?since=yesterday&until=1700000000").await,
        StatusCode::BAD_REQUEST,
        err("invalid_window", "cannot parse since=`yesterday`"),
    );

    // Patch detail, with the diff re-rendered from the parsed patch.
    let diff = "diff --git a/fs/ext4/inode.c b/fs/ext4/inode.c\n--- a/fs/ext4/inode.c\n+++ b/fs/ext4/inode.c\n\
                @@ -10,2 +10,3 @@\n \tint ret;\n-\tkfree(buf);\n+\tif (buf)\n+\t\tkfree(buf);\n";
    expect(
        &get(&app, &format!("/api/patches/{s1}")).await,
        StatusCode::OK,
        json!({
            "sha": s1, "short_sha": "000000000000", "author_name": "Ada Dev", "author_email": "ada@example.org",
            "author_date": "2023-11-14T21:13:20Z", "subject": "ext4: free buffer on error path",
            "message": "ext4: free buffer on error path\nAvoid a leak.\n\nSigned-off-by: Ada Dev <ada@example.org>",
            "paths": ["fs/ext4/inode.c"], "diff": diff, "concerned": true, "raw_score": 0.91, "final_score": 0.91,
            "cc_stable": false, "recommended": true, "feedback": pending,
        }),
    );
    let detail3 = get(&app, &format!("/api/patches/{}", sha(3))).await.json();
    assert_eq!(
        [
            &detail3["concerned"],
            &detail3["raw_score"],
            &detail3["final_score"],
            &detail3["recommended"]
        ],
        [&json!(false), &Value::Null, &Value::Null, &Value::Null]
    );
    let unknown = sha(0xdead);
    expect(
        &get(&app, &format!("/api/patches/{unknown}")).await,
        StatusCode::NOT_FOUND,
        err("unknown_sha", &format!("unknown sha {unknown}")),
    );

    // Stats before and after feedback (read-your-writes).
    expect(
        &get(&app, "/api/stats").await,
        StatusCode::OK,
        funnel(4, 3, 2, 0, 0, zero_reasons()),
    );
    let fb1 = format!("/api/patches/{s1}/feedback");
    let fb2 = format!("/api/patches/{s2}/feedback");
    expect(
        &post(
            &app,
            &fb1,
            Some(r#"{"verdict": "accepted", "reviewer": "kim"}"#),
        )
        .await,
        StatusCode::CREATED,
        json!({"sha": s1, "label": "bug_fix", "superseded": false, "feedback": {"status": "accepted"}}),
    );
    expect(
        &get(&app, "/api/stats").await,
        StatusCode::OK,
        funnel(4, 3, 2, 1, 0, zero_reasons()),
    );
    expect(
        &post(&app, &fb2, Some(r#"{"verdict": "rejected", "reason": "missing_dependency", "note": "needs 5.4 series"}"#)).await,
        StatusCode::CREATED,
        json!({"sha": s2, "label": "excluded", "superseded": false,
               "feedback": {"status": "rejected", "reason": "missing_dependency"}}),
    );
    let mut reasons = zero_reasons();
    reasons["missing_dependency"] = json!(1);
    expect(
        &get(&app, "/api/stats").await,
        StatusCode::OK,
        funnel(4, 3, 2, 1, 1, reasons),
    );
    expect(
        &get(&app, "/api/recommendations").await,
        StatusCode::OK,
        json!([
            rec2(json!({"status": "rejected", "reason": "missing_dependency"})),
            rec1(json!({"status": "accepted"}))
        ]),
    );
    // A later verdict supersedes the earlier one.
    expect(
        &post(&app, &fb2, Some(r#"{"verdict": "accepted"}"#)).await,
        StatusCode::CREATED,
        json!({"sha": s2, "label": "bug_fix", "superseded": true, "feedback": {"status": "accepted"}}),
    );
    expect(
        &get(&app, "/api/stats").await,
        StatusCode::OK,
        funnel(4, 3, 2, 2, 0, zero_reasons()),
    );

    // Feedback errors.
    expect(
        &post(
            &app,
            &format!("/api/patches/{unknown}/feedback"),
            Some(r#"{"verdict": "accepted"}"#),
        )
        .await,
        StatusCode::NOT_FOUND,
        err("unknown_sha", &format!("unknown sha {unknown}")),
    );
    expect(
        &post(&app, &fb1, Some(r#"{"verdict": "rejected"}"#)).await,
        StatusCode::BAD_REQUEST,
        err(
            "invalid_record",
            "invalid record: rejected verdict needs a reason",
        ),
    );
    expect(
        &post(
            &app,
            &fb1,
            Some(r#"{"verdict": "accepted", "reason": "other"}"#),
        )
        .await,
        StatusCode::BAD_REQUEST,
        err(
            "invalid_record",
            "invalid record: accepted verdict carries reason `other`",
        ),
    );
    expect(
        &post(
            &app,
            "/api/patches/not-a-sha/feedback",
            Some(r#"{"verdict": "accepted"}"#),
        )
        .await,
        StatusCode::BAD_REQUEST,
        err(
            "invalid_record",
            "invalid record: `not-a-sha` is not a 40-hex sha",
        ),
    );
    let bad = post(&app, &fb1, Some("{verdict")).await;
    assert_eq!(
        (bad.status, bad.json()["error"]["code"].clone()),
        (StatusCode::BAD_REQUEST, json!("invalid_record"))
    );
    let bad = post(&app, &fb1, Some(r#"{"verdict": "maybe"}"#)).await;
    assert_eq!(
        (bad.status, bad.json()["error"]["code"].clone()),
        (StatusCode::BAD_REQUEST, json!("invalid_record"))
    );
    expect(
        &get(&app, "/api/stats").await,
        StatusCode::OK,
        funnel(4, 3, 2, 2, 0, zero_reasons()),
    );

    // Unknown jobs and routes.
    expect(
        &get(&app, "/api/jobs/job-000001").await,
        StatusCode::NOT_FOUND,
        err("unknown_job", "unknown job job-000001"),
    );
    expect(
        &get(&app, "/api/jobs/job-1").await,
        StatusCode::NOT_FOUND,
        err("unknown_job", "unknown job job-1"),
    );
    expect(
        &get(&app, "/api/nothing").await,
        StatusCode::NOT_FOUND,
        err("not_found", "no endpoint at /api/nothing"),
    );

    // Retrain: one at a time, then the new bundle serves the ingest job.
    let held = TrainLock::acquire(&f.cfg.store_dir).unwrap();
    let busy = AppError::from(ModelError::TrainingInProgress(
        f.cfg.store_dir.display().to_string(),
    ));
    expect(
        &post(&app, "/api/retrain", None).await,
        StatusCode::CONFLICT,
        err("retrain_in_progress", &busy.detail),
    );
    drop(held);
    let queued = |id: &str, kind: &str| {
        json!({"id": id, "kind": kind, "state": "queued", "created_at": "2023-11-14T22:13:20Z",
               "finished_at": null, "result": null, "error": null})
    };
    expect(
        &post(&app, "/api/retrain", None).await,
        StatusCode::ACCEPTED,
        queued("job-000001", "retrain"),
    );
    let job = wait_job(&app, "job-000001").await;
    assert_eq!(job["state"], "succeeded", "{job}");
    assert_eq!(job["finished_at"], "2023-11-14T22:13:20Z");
    // 30 base patches plus the two reviewed ones, both accepted.
    assert_eq!(
        (&job["result"]["corpus_size"], &job["result"]["positives"]),
        (&json!(32), &json!(17))
    );
    assert_eq!(job["result"]["epochs"], 2);
    assert_eq!(job["result"]["out"], json!(f.cfg.bundle_dir));
    assert!(f.cfg.bundle_dir.join("manifest.json").is_file());

    let window = "since=2023-11-12T00:00:00Z&until=2023-11-13T00:00:00Z";
    expect(
        &post(&app, &format!("/api/ingest/run?{window}"), None).await,
        StatusCode::ACCEPTED,
        queued("job-000002", "ingest"),
    );
    let job = wait_job(&app, "job-000002").await;
    let recommended = ops::stats(
        &f.cfg,
        Some(
            &ops::window_from(Some(1_699_747_200), Some(1_699_833_600), 1)
                .unwrap()
                .unwrap(),
        ),
    )
    .unwrap()
    .recommended;
    assert_eq!(
        job,
        json!({
            "id": "job-000002", "kind": "ingest", "state": "succeeded", "created_at": "2023-11-14T22:13:20Z",
            "finished_at": "2023-11-14T22:13:20Z", "error": null,
            "result": {
                "ingest": {"since": "2023-11-12T00:00:00Z", "until": "2023-11-13T00:00:00Z", "enumerated": 3,
                           "parsed": 3, "new_patches": 3, "parse_failures": [], "high_water_mark": null},
                "analysis": {"analyzed": 3, "concerned": 2, "recommended": recommended, "failures": 0},
            },
        })
    );
    let all = get(&app, "/api/stats").await.json();
    assert_eq!(
        (&all["analyzed"], &all["concerned"]),
        (&json!(7), &json!(5))
    );

    let mut bodies = Vec::new();
    for uri in REPLAYED {
        let r = get(&app, uri).await;
        assert_eq!(r.status, StatusCode::OK, "{uri}: {}", r.text);
        bodies.push(r.text);
    }
    bodies
}
