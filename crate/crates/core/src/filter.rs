//! Concerned-module filtering by path prefix.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::patch::{changed_paths, Patch};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidPrefix {
    pub line: usize,
    pub prefix: String,
}

impl fmt::Display for InvalidPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: invalid module prefix `{}`",
            self.line, self.prefix
        )
    }
}

impl std::error::Error for InvalidPrefix {}

/// Path prefixes of the modules a downstream tree ships.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleList {
    prefixes: Vec<String>,
    pub enabled: bool,
}

impl Default for ModuleList {
    fn default() -> Self {
        ModuleList {
            prefixes: Vec::new(),
            enabled: true,
        }
    }
}

/// Strips surrounding slashes and rejects empty, `.` and `..` segments.
pub fn normalize_prefix(raw: &str) -> Option<String> {
    let trimmed = raw.trim().trim_matches('/');
    if trimmed.is_empty() {
        return None;
    }
    let ok = trimmed
        .split('/')
        .all(|seg| !seg.is_empty() && seg != "." && seg != "..");
    ok.then(|| trimmed.to_owned())
}

impl ModuleList {
    pub fn new<I, S>(prefixes: I) -> Result<Self, InvalidPrefix>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let prefixes = prefixes
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                normalize_prefix(p.as_ref()).ok_or_else(|| InvalidPrefix {
                    line: i + 1,
                    prefix: p.as_ref().to_owned(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ModuleList {
            prefixes,
            enabled: true,
        })
    }

    /// A list that lets every patch through.
    pub fn disabled() -> Self {
        ModuleList {
            prefixes: Vec::new(),
            enabled: false,
        }
    }

    /// One prefix per line; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, InvalidPrefix> {
        let mut prefixes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let p = normalize_prefix(content).ok_or_else(|| InvalidPrefix {
                line: i + 1,
                prefix: content.to_owned(),
            })?;
            prefixes.push(p);
        }
        let list = ModuleList {
            prefixes,
            enabled: true,
        };
        list.warn_if_empty();
        Ok(list)
    }

    pub fn warn_if_empty(&self) {
        if self.enabled && self.prefixes.is_empty() {
            warn!("module list is enabled but empty: every patch will be filtered out");
        }
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    pub fn push(&mut self, prefix: &str) -> Result<(), InvalidPrefix> {
        let p = normalize_prefix(prefix).ok_or_else(|| InvalidPrefix {
            line: self.prefixes.len() + 1,
            prefix: prefix.to_owned(),
        })?;
        self.prefixes.push(p);
        Ok(())
    }

    pub fn matches_path(&self, path: &str) -> bool {
        self.prefixes.iter().any(|p| {
            path.strip_prefix(p.as_str())
                .is_some_and(|rest| rest.is_empty() || rest.starts_with('/'))
        })
    }
}

pub fn is_concerned(patch: &Patch, modules: &ModuleList) -> bool {
    !modules.enabled || changed_paths(patch).iter().any(|p| modules.matches_path(p))
}

/// Order-preserving split into (concerned, filtered out).
pub fn partition<'a>(
    patches: &'a [Patch],
    modules: &ModuleList,
) -> (Vec<&'a Patch>, Vec<&'a Patch>) {
    patches.iter().partition(|p| is_concerned(p, modules))
}
