use std::fs;

use patchbot_core::ingest::{collect, enumerate, HighWaterMark, IngestError, MonitorWindow};
use patchbot_testkit::gitrepo::{commit_all, git, init_repo};

const DAY: i64 = 86_400;
const T0: i64 = 1_700_000_000;

fn three_commit_repo(dir: &std::path::Path) -> Vec<String> {
    init_repo(dir);
    let mut shas = Vec::new();
    for (i, name) in ["mm/slab.c", "fs/ext4/inode.c", "kernel/fork.c"]
        .iter()
        .enumerate()
    {
        let path = dir.join(name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, format!("int v{i};\n")).unwrap();
        shas.push(commit_all(
            dir,
            &format!("change {i}\n\nbody {i}"),
            T0 + i as i64 * DAY,
        ));
    }
    shas
}

#[test]
fn window_selects_by_author_date() {
    let dir = tempfile::tempdir().unwrap();
    let shas = three_commit_repo(dir.path());
    let window = MonitorWindow::new(T0 + DAY, T0 + 3 * DAY, 2).unwrap();
    let got = collect(dir.path(), &window).unwrap();
    assert_eq!(got.enumerated, 2);
    assert!(got.failures.is_empty());
    let picked: Vec<&str> = got.patches.iter().map(|p| p.sha()).collect();
    assert_eq!(picked, [shas[1].as_str(), shas[2].as_str()]);
    assert_eq!(got.patches[0].files[0].new_path, "fs/ext4/inode.c");
    assert_eq!(got.patches[0].commit.subject, "change 1");

    // Committer dates sit three days later; they must not matter.
    let window = MonitorWindow::new(T0 + 3 * DAY, T0 + 6 * DAY, 3).unwrap();
    assert!(collect(dir.path(), &window).unwrap().patches.is_empty());

    let mark = HighWaterMark::advance(None, &got.patches).unwrap();
    assert_eq!(
        (mark.last_sha.as_str(), mark.last_ts),
        (shas[2].as_str(), T0 + 2 * DAY)
    );
}

#[test]
fn merges_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let shas = three_commit_repo(dir.path());
    git(dir.path(), &["checkout", "-q", "-b", "side", &shas[0]], &[]);
    fs::write(dir.path().join("side.c"), "int side;\n").unwrap();
    let side = commit_all(dir.path(), "side change", T0 + DAY / 2);
    git(dir.path(), &["checkout", "-q", "master"], &[]);
    let env = [
        ("GIT_AUTHOR_DATE", format!("@{} +0000", T0 + 4 * DAY)),
        ("GIT_COMMITTER_DATE", format!("@{} +0000", T0 + 4 * DAY)),
    ];
    git(
        dir.path(),
        &["merge", "-q", "--no-ff", "-m", "merge side", "side"],
        &env,
    );
    let window = MonitorWindow::new(T0 - DAY, T0 + 10 * DAY, 11).unwrap();
    let listed: Vec<String> = enumerate(dir.path(), &window)
        .unwrap()
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    assert_eq!(
        listed,
        [shas[0].clone(), side, shas[1].clone(), shas[2].clone()]
    );
}

#[test]
fn missing_repo_is_reported() {
    let window = MonitorWindow::new(0, 10, 1).unwrap();
    let err = collect(std::path::Path::new("/nonexistent/patchbot-repo"), &window).unwrap_err();
    assert!(matches!(err, IngestError::RepoUnavailable { .. }));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        collect(dir.path(), &window),
        Err(IngestError::RepoUnavailable { .. })
    ));
}
