//! Scratch git repositories and a `git show --numstat -z` oracle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Runs git with user and system config ignored.
pub fn git(repo: &Path, args: &[&str], env: &[(&str, String)]) -> String {
    let mut cmd = Command::new("git");
    cmd.arg("-C").arg(repo).args(args);
    cmd.env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("git is installed");
    assert!(
        out.status.success(),
        "git {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 git output")
}

pub fn init_repo(repo: &Path) {
    fs::create_dir_all(repo).unwrap();
    git(repo, &["init", "-q", "-b", "master"], &[]);
    git(repo, &["config", "user.name", "Test Author"], &[]);
    git(repo, &["config", "user.email", "author@example.org"], &[]);
    git(repo, &["config", "commit.gpgsign", "false"], &[]);
}

/// Commits everything in the work tree with the given author timestamp;
/// the committer date is deliberately different.
pub fn commit_all(repo: &Path, message: &str, author_ts: i64) -> String {
    git(repo, &["add", "-A"], &[]);
    let env = [
        ("GIT_AUTHOR_DATE", format!("@{author_ts} +0000")),
        (
            "GIT_COMMITTER_DATE",
            format!("@{} +0000", author_ts + 86_400 * 3),
        ),
    ];
    git(
        repo,
        &["commit", "-q", "--allow-empty", "-m", message],
        &env,
    );
    git(repo, &["rev-parse", "HEAD"], &[]).trim().to_owned()
}

const DIRS: &[&str] = &[
    "kernel",
    "mm",
    "fs/ext4",
    "drivers/net",
    "net/ipv4",
    "Documentation/admin guide",
    "drivers/misc/ünïcode",
];

const C_LINES: &[&str] = &[
    "#include <linux/slab.h>",
    "static int count;",
    "\tif (!ptr)",
    "\t\treturn -ENOMEM;",
    "\tspin_lock_irqsave(&q->lock, flags);",
    "\tspin_unlock_irqrestore(&q->lock, flags);",
    "\tkfree(buf);",
    "\tbuf = kmalloc(len, GFP_KERNEL);",
    "\tpr_err(\"bad \\\"value\\\" %d\\n\", v);",
    "\t/* comment with -- and ++ inside */",
    "-- leading dashes",
    "++ leading pluses",
    "--- not a header",
    "+++ not a header either",
    "",
    "   ",
    "\\ backslash line",
    "@@ looks like a hunk @@",
    "diff --git a/x b/x",
    "return 0;",
    "}",
];

fn random_text(rng: &mut ChaCha8Rng, lines: usize) -> String {
    let mut s: String = (0..lines)
        .map(|_| format!("{}\n", C_LINES.choose(rng).unwrap()))
        .collect();
    if rng.random_bool(0.1) {
        s.pop();
    }
    s
}

fn edit_text(rng: &mut ChaCha8Rng, old: &str) -> String {
    let mut lines: Vec<String> = old.lines().map(str::to_owned).collect();
    for _ in 0..rng.random_range(1..5) {
        let at = rng.random_range(0..=lines.len());
        match rng.random_range(0..3) {
            0 if at < lines.len() => {
                lines.remove(at);
            }
            1 if at < lines.len() => lines[at] = (*C_LINES.choose(rng).unwrap()).to_owned(),
            _ => lines.insert(at, (*C_LINES.choose(rng).unwrap()).to_owned()),
        }
    }
    let mut s = lines.join("\n");
    if !rng.random_bool(0.1) {
        s.push('\n');
    }
    s
}

fn random_name(rng: &mut ChaCha8Rng, i: usize) -> String {
    let ext = ["c", "h", "txt", "S"].choose(rng).unwrap();
    let stem = if rng.random_bool(0.15) {
        format!("file {i}")
    } else {
        format!("file_{i}")
    };
    format!("{}/{stem}.{ext}", DIRS.choose(rng).unwrap())
}

/// Builds a history of `commits` commits (plus a root commit) mixing edits,
/// additions, deletions, renames, binary files, mode changes, odd path
/// names and empty commits. Returns `(sha, author_ts)` oldest first.
pub fn build_history(repo: &Path, commits: usize, seed: u64) -> Vec<(String, i64)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_repo(repo);
    let mut files: BTreeMap<String, bool> = BTreeMap::new(); // path -> is binary
    let mut next = 0usize;
    let mut ts = 1_600_000_000i64;
    let mut out = Vec::new();
    let write = |path: &str, bytes: &[u8]| {
        let full = repo.join(path);
        fs::create_dir_all(full.parent().unwrap()).unwrap();
        fs::write(full, bytes).unwrap();
    };
    for _ in 0..5 {
        let name = random_name(&mut rng, next);
        next += 1;
        let text = random_text(&mut rng, 12);
        write(&name, text.as_bytes());
        files.insert(name, false);
    }
    out.push((commit_all(repo, "initial import", ts), ts));
    for c in 0..commits {
        ts += rng.random_range(600..86_400);
        let ops = rng.random_range(1..4);
        for _ in 0..ops {
            let op = rng.random_range(0..10);
            let existing: Vec<String> = files.keys().cloned().collect();
            let pick = existing.choose(&mut rng).cloned();
            match (op, pick) {
                (0 | 1 | 2 | 3, Some(p)) if !files[&p] => {
                    let old = fs::read_to_string(repo.join(&p)).unwrap();
                    write(&p, edit_text(&mut rng, &old).as_bytes());
                }
                (4, Some(p)) if files.len() > 3 => {
                    fs::remove_file(repo.join(&p)).unwrap();
                    files.remove(&p);
                }
                (5, Some(p)) => {
                    let name = random_name(&mut rng, next);
                    next += 1;
                    let bytes = fs::read(repo.join(&p)).unwrap();
                    fs::remove_file(repo.join(&p)).unwrap();
                    let binary = files.remove(&p).unwrap();
                    let bytes = if !binary && rng.random_bool(0.4) {
                        edit_text(&mut rng, &String::from_utf8(bytes).unwrap()).into_bytes()
                    } else {
                        bytes
                    };
                    write(&name, &bytes);
                    files.insert(name, binary);
                }
                (6, _) => {
                    let name = format!("firmware/blob_{next}.bin");
                    next += 1;
                    let bytes: Vec<u8> = (0..64)
                        .map(|_| rng.random::<u8>())
                        .chain([0u8, 0, 1])
                        .collect();
                    write(&name, &bytes);
                    files.insert(name, true);
                }
                (7, Some(p)) => {
                    use std::os::unix::fs::PermissionsExt;
                    let full = repo.join(&p);
                    let mode = fs::metadata(&full).unwrap().permissions().mode();
                    fs::set_permissions(&full, fs::Permissions::from_mode(mode ^ 0o111)).unwrap();
                }
                (8, Some(p)) if files[&p] => {
                    let bytes: Vec<u8> = (0..48).map(|_| rng.random::<u8>()).chain([0u8]).collect();
                    write(&p, &bytes);
                }
                (9, _) if c % 7 == 3 => {}
                _ => {
                    let name = random_name(&mut rng, next);
                    next += 1;
                    let lines = rng.random_range(1..20);
                    write(&name, random_text(&mut rng, lines).as_bytes());
                    files.insert(name, false);
                }
            }
        }
        let msg = format!("subsys: change number {c}\n\nSome body text.\n\nSigned-off-by: Test Author <author@example.org>");
        out.push((commit_all(repo, &msg, ts), ts));
    }
    out
}

/// One record of `git show --numstat -z`: `None` counts mean binary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NumstatEntry {
    pub old_path: String,
    pub new_path: String,
    pub added: Option<usize>,
    pub removed: Option<usize>,
}

pub fn parse_numstat_z(raw: &str) -> Vec<NumstatEntry> {
    let mut out = Vec::new();
    let mut fields = raw.split('\0');
    while let Some(head) = fields.next() {
        let head = head.trim_start_matches('\n');
        if head.is_empty() {
            continue;
        }
        let mut parts = head.splitn(3, '\t');
        let added = parts.next().unwrap();
        let removed = parts.next().expect("numstat removed column");
        let path = parts.next().expect("numstat path column");
        let count = |s: &str| {
            if s == "-" {
                None
            } else {
                Some(s.parse().expect("numstat count"))
            }
        };
        let (old_path, new_path) = if path.is_empty() {
            let old = fields.next().expect("rename source").to_owned();
            let new = fields.next().expect("rename target").to_owned();
            (old, new)
        } else {
            (path.to_owned(), path.to_owned())
        };
        out.push(NumstatEntry {
            old_path,
            new_path,
            added: count(added),
            removed: count(removed),
        });
    }
    out
}

/// The oracle's view of a commit, with the same rename detection as ingestion.
pub fn numstat(repo: &Path, sha: &str) -> Vec<NumstatEntry> {
    let raw = git(
        repo,
        &[
            "show",
            "--numstat",
            "-z",
            "--format=",
            "--find-renames",
            "--no-ext-diff",
            "--no-textconv",
            sha,
        ],
        &[],
    );
    let mut entries = parse_numstat_z(&raw);
    entries.sort();
    entries
}
