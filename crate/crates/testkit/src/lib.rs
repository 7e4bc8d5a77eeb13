//! Test-only helpers shared by the workspace's integration and acceptance
//! tests: independent reference implementations and synthetic data.

pub mod gitrepo;
pub mod reference;
pub mod synth;

use patchbot_core::patch::{Patch, DEV_NULL};

use crate::gitrepo::NumstatEntry;

/// Per-file counts as the parser sees them, in the oracle's shape.
pub fn parsed_numstat(patch: &Patch) -> Vec<NumstatEntry> {
    let mut out: Vec<NumstatEntry> = patch
        .files
        .iter()
        .map(|f| {
            let old_path = if f.old_path == DEV_NULL {
                f.new_path.clone()
            } else {
                f.old_path.clone()
            };
            let new_path = if f.new_path == DEV_NULL {
                f.old_path.clone()
            } else {
                f.new_path.clone()
            };
            let (added, removed) = if f.binary {
                (None, None)
            } else {
                (Some(f.added()), Some(f.removed()))
            };
            NumstatEntry {
                old_path,
                new_path,
                added,
                removed,
            }
        })
        .collect();
    out.sort();
    out
}

/// Compares parsed counts with the oracle's. git prints `-` counts for any
/// binary file, including a mode-only change that carries no diff text, so
/// a `-` on the oracle side accepts either a binary flag or zero counts.
pub fn numstat_mismatches(parsed: &[NumstatEntry], oracle: &[NumstatEntry]) -> Vec<String> {
    let mut out = Vec::new();
    if parsed.len() != oracle.len() {
        out.push(format!(
            "{} files parsed, oracle has {}",
            parsed.len(),
            oracle.len()
        ));
    }
    for (p, o) in parsed.iter().zip(oracle) {
        let paths_ok = p.old_path == o.old_path && p.new_path == o.new_path;
        let counts_ok = match (o.added, o.removed) {
            (None, None) => matches!((p.added, p.removed), (None, None) | (Some(0), Some(0))),
            _ => (p.added, p.removed) == (o.added, o.removed),
        };
        if !paths_ok || !counts_ok {
            out.push(format!("parsed {p:?} vs oracle {o:?}"));
        }
    }
    out
}
