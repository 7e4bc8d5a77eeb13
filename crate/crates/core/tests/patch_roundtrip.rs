use patchbot_core::patch::{
    changed_paths, parse_patch, render_patch, ChangeKind, Commit, FileChange, Hunk, HunkLine,
    LineTag, Patch, DEV_NULL,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn segment() -> impl Strategy<Value = String> {
    "[a-z0-9_é\"\t]([a-z0-9_. é\"\t-]{0,6}[a-z0-9_é])?"
}

fn path() -> impl Strategy<Value = String> {
    vec(segment(), 1..4).prop_map(|s| s.join("/"))
}

fn hunk_line() -> impl Strategy<Value = HunkLine> {
    let tag = prop_oneof![
        Just(LineTag::Context),
        Just(LineTag::Added),
        Just(LineTag::Removed)
    ];
    (tag, "[ -~\té\r]{0,20}").prop_map(|(tag, text)| HunkLine { tag, text })
}

fn hunk() -> impl Strategy<Value = Hunk> {
    (1u32..5000, 0u32..50, vec(hunk_line(), 1..8)).prop_map(|(old_start, shift, lines)| {
        let old_count = lines.iter().filter(|l| l.tag != LineTag::Added).count() as u32;
        let new_count = lines.iter().filter(|l| l.tag != LineTag::Removed).count() as u32;
        Hunk {
            old_start,
            old_count,
            new_start: old_start + shift,
            new_count,
            lines,
        }
    })
}

fn file_change() -> impl Strategy<Value = FileChange> {
    (0u8..4, path(), path(), any::<bool>(), vec(hunk(), 0..3)).prop_map(
        |(k, a, b, binary, hunks)| {
            let hunks = if binary { Vec::new() } else { hunks };
            match k {
                0 => FileChange {
                    old_path: a.clone(),
                    new_path: a,
                    kind: ChangeKind::Modify,
                    binary,
                    hunks,
                },
                1 => FileChange {
                    old_path: DEV_NULL.into(),
                    new_path: a,
                    kind: ChangeKind::Add,
                    binary,
                    hunks,
                },
                2 => FileChange {
                    old_path: a,
                    new_path: DEV_NULL.into(),
                    kind: ChangeKind::Delete,
                    binary,
                    hunks,
                },
                _ if a == b => FileChange {
                    old_path: a.clone(),
                    new_path: a,
                    kind: ChangeKind::Modify,
                    binary,
                    hunks,
                },
                _ => FileChange {
                    old_path: a,
                    new_path: b,
                    kind: ChangeKind::Rename,
                    binary,
                    hunks,
                },
            }
        },
    )
}

fn patch() -> impl Strategy<Value = Patch> {
    let body = vec(
        "[ -~é]{0,30}".prop_filter("reserved marker", |l| l != "body-end"),
        0..6,
    );
    (
        "[0-9a-f]{40}",
        "[A-Za-z][A-Za-z .'é-]{0,20}",
        "[a-z]{1,8}@[a-z]{1,8}\\.org",
        -1_000_000_000i64..4_000_000_000,
        "[ -~é]{1,60}",
        body,
        vec(file_change(), 0..5),
    )
        .prop_map(
            |(sha, author_name, author_email, author_date, subject, body, files)| {
                let mut seen = std::collections::HashSet::new();
                let files = files
                    .into_iter()
                    .filter(|f| seen.insert((f.old_path.clone(), f.new_path.clone())))
                    .collect();
                Patch {
                    commit: Commit {
                        sha,
                        author_name,
                        author_email,
                        author_date,
                        subject,
                        body: body.join("\n"),
                    },
                    files,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn render_then_parse_is_identity(p in patch()) {
        let text = render_patch(&p);
        let back = parse_patch(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &p);
        for f in &back.files {
            for h in &f.hunks {
                prop_assert!(h.is_consistent());
            }
        }
        prop_assert!(!changed_paths(&back).contains(DEV_NULL));
    }

    #[test]
    fn truncating_a_hunk_is_reported_with_a_line(p in patch()) {
        let text = render_patch(&p);
        let lines: Vec<&str> = text.lines().collect();
        if let Some(last_payload) = lines.iter().rposition(|l| l.starts_with("@@ ")).map(|i| i + 1) {
            let cut = lines[..last_payload].join("\n") + "\n";
            match parse_patch(&cut) {
                Err(e) => prop_assert!(e.line() >= 1 && e.line() <= last_payload + 1),
                Ok(_) => prop_assert!(false, "truncated hunk parsed"),
            }
        }
    }
}
