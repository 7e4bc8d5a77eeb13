//! Commit and diff domain types, plus a parser for git's textual patch output.
//!
//! Three input shapes are accepted:
//!
//! * the canonical template produced by
//!   `git show --format='commit %H%nauthor %an%nemail %ae%ndate %at%nsubject %s%nbody-begin%n%b%nbody-end' --patch --no-color`
//!   (see [`GIT_FORMAT`]),
//! * `git format-patch --stdout` mails,
//! * plain `git show` / `git log -p` in the default "medium" pretty format.
//!
//! [`render_patch`] writes the canonical template back out; parsing its output
//! reproduces the original [`Patch`].

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pretty-format template handed to `git log` / `git show`.
pub const GIT_FORMAT: &str =
    "commit %H%nauthor %an%nemail %ae%ndate %at%nsubject %s%nbody-begin%n%b%nbody-end";

/// Path git uses for the missing side of an added or deleted file.
pub const DEV_NULL: &str = "/dev/null";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed header at line {line}: {detail}")]
    MalformedHeader { line: usize, detail: String },
    #[error("malformed hunk at line {line}: {detail}")]
    MalformedHunk { line: usize, detail: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::MalformedHeader { line, .. } | ParseError::MalformedHunk { line, .. } => {
                *line
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub sha: String,
    pub author_name: String,
    pub author_email: String,
    /// UTC epoch seconds.
    pub author_date: i64,
    pub subject: String,
    pub body: String,
}

impl Commit {
    pub fn message(&self) -> String {
        format!("{}\n{}", self.subject, self.body)
    }
}

pub fn is_sha(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineTag {
    Context,
    Added,
    Removed,
}

impl LineTag {
    fn marker(self) -> char {
        match self {
            LineTag::Context => ' ',
            LineTag::Added => '+',
            LineTag::Removed => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub tag: LineTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub old_count: u32,
    pub new_start: u32,
    pub new_count: u32,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    /// Checks the header counts against the line tags.
    pub fn is_consistent(&self) -> bool {
        let old = self
            .lines
            .iter()
            .filter(|l| l.tag != LineTag::Added)
            .count();
        let new = self
            .lines
            .iter()
            .filter(|l| l.tag != LineTag::Removed)
            .count();
        old == self.old_count as usize && new == self.new_count as usize
    }

    pub fn added(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| l.tag == LineTag::Added)
            .count()
    }

    pub fn removed(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| l.tag == LineTag::Removed)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Modify,
    Add,
    Delete,
    Rename,
}

/// One `diff --git` section. Added files carry [`DEV_NULL`] as `old_path`,
/// deleted files carry it as `new_path`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub old_path: String,
    pub new_path: String,
    pub kind: ChangeKind,
    #[serde(default)]
    pub binary: bool,
    pub hunks: Vec<Hunk>,
}

impl FileChange {
    pub fn added(&self) -> usize {
        self.hunks.iter().map(Hunk::added).sum()
    }

    pub fn removed(&self) -> usize {
        self.hunks.iter().map(Hunk::removed).sum()
    }

    /// The path that names this file in `diff --git` headers.
    pub fn display_path(&self) -> &str {
        if self.kind == ChangeKind::Delete {
            &self.old_path
        } else {
            &self.new_path
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub commit: Commit,
    pub files: Vec<FileChange>,
}

impl Patch {
    pub fn sha(&self) -> &str {
        &self.commit.sha
    }
}

/// Union of old and new paths over all files, without the `/dev/null` sentinel.
pub fn changed_paths(patch: &Patch) -> BTreeSet<String> {
    patch
        .files
        .iter()
        .flat_map(|f| [f.old_path.as_str(), f.new_path.as_str()])
        .filter(|p| *p != DEV_NULL)
        .map(str::to_owned)
        .collect()
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        Lines { lines, pos: 0 }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<&'a str> {
        let l = self.peek();
        if l.is_some() {
            self.pos += 1;
        }
        l
    }

    /// 1-based number of the line `peek` would return.
    fn lineno(&self) -> usize {
        self.pos + 1
    }

    fn header_err(&self, detail: impl Into<String>) -> ParseError {
        ParseError::MalformedHeader {
            line: self.lineno(),
            detail: detail.into(),
        }
    }

    fn expect_prefixed(&mut self, prefix: &str) -> Result<&'a str, ParseError> {
        match self.peek().and_then(|l| l.strip_prefix(prefix)) {
            Some(rest) => {
                self.pos += 1;
                Ok(rest)
            }
            None => Err(self.header_err(format!("expected `{}`", prefix.trim_end()))),
        }
    }
}

/// Parses one commit in any of the supported textual shapes.
pub fn parse_patch(text: &str) -> Result<Patch, ParseError> {
    let mut lines = Lines::new(text);
    while lines.peek().is_some_and(|l| l.trim().is_empty()) {
        lines.next();
    }
    let first = lines
        .peek()
        .ok_or_else(|| lines.header_err("empty input"))?;
    let commit = if let Some(sha) = first.strip_prefix("commit ") {
        let sha = sha.split_whitespace().next().unwrap_or("");
        if !is_sha(sha) {
            return Err(lines.header_err("no commit sha found"));
        }
        let sha = sha.to_owned();
        lines.next();
        match lines.peek() {
            Some(l) if l.starts_with("author ") => parse_template_header(&mut lines, sha)?,
            _ => parse_medium_header(&mut lines, sha)?,
        }
    } else if let Some(rest) = first.strip_prefix("From ") {
        let sha = rest.split_whitespace().next().unwrap_or("");
        if !is_sha(sha) {
            return Err(lines.header_err("no commit sha found"));
        }
        let sha = sha.to_owned();
        lines.next();
        parse_mail_header(&mut lines, sha)?
    } else {
        return Err(lines.header_err("no commit sha found"));
    };
    let files = parse_diff_sections(&mut lines)?;
    Ok(Patch { commit, files })
}

fn parse_template_header(lines: &mut Lines<'_>, sha: String) -> Result<Commit, ParseError> {
    let author_name = lines.expect_prefixed("author ")?.to_owned();
    let author_email = lines.expect_prefixed("email ")?.to_owned();
    let date_line = lines.lineno();
    let date = lines.expect_prefixed("date ")?;
    let author_date = date
        .trim()
        .parse::<i64>()
        .map_err(|_| ParseError::MalformedHeader {
            line: date_line,
            detail: format!("bad epoch timestamp `{date}`"),
        })?;
    let subject = lines.expect_prefixed("subject ")?.to_owned();
    if lines.peek() != Some("body-begin") {
        return Err(lines.header_err("expected `body-begin`"));
    }
    lines.next();
    let mut body = Vec::new();
    loop {
        match lines.next() {
            Some("body-end") => break,
            Some(l) => body.push(l),
            None => return Err(lines.header_err("unterminated body, expected `body-end`")),
        }
    }
    Ok(Commit {
        sha,
        author_name,
        author_email,
        author_date,
        subject,
        body: body.join("\n"),
    })
}

fn split_name_email(s: &str) -> (String, String) {
    match (s.rfind('<'), s.rfind('>')) {
        (Some(open), Some(close)) if open < close => (
            s[..open].trim().to_owned(),
            s[open + 1..close].trim().to_owned(),
        ),
        _ => (s.trim().to_owned(), String::new()),
    }
}

fn parse_date(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(n) = s.parse::<i64>() {
        return Some(n);
    }
    if let Ok(d) = DateTime::parse_from_rfc2822(s) {
        return Some(d.timestamp());
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    // git's default: "Mon Feb 4 10:00:00 2019 +0100"
    DateTime::parse_from_str(s, "%a %b %e %H:%M:%S %Y %z")
        .ok()
        .map(|d| d.timestamp())
}

fn split_message(msg_lines: &[&str]) -> (String, String) {
    let mut it = msg_lines.iter().skip_while(|l| l.trim().is_empty());
    let subject = it.next().map(|s| s.to_string()).unwrap_or_default();
    let rest: Vec<&str> = it.copied().collect();
    let start = rest
        .iter()
        .position(|l| !l.trim().is_empty())
        .unwrap_or(rest.len());
    let end = rest
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(start, |i| i + 1);
    let mut body = rest[start..end].join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    (subject, body)
}

fn parse_medium_header(lines: &mut Lines<'_>, sha: String) -> Result<Commit, ParseError> {
    let mut author = None;
    let mut date = None;
    while let Some(l) = lines.peek() {
        if l.is_empty() {
            lines.next();
            break;
        }
        let lineno = lines.lineno();
        lines.next();
        if let Some(a) = l.strip_prefix("Author:") {
            author = Some(split_name_email(a));
        } else if let Some(d) = l.strip_prefix("Date:") {
            date = Some(parse_date(d).ok_or_else(|| ParseError::MalformedHeader {
                line: lineno,
                detail: format!("unparseable date `{}`", d.trim()),
            })?);
        }
    }
    let (author_name, author_email) = author.ok_or_else(|| lines.header_err("missing Author"))?;
    let author_date = date.ok_or_else(|| lines.header_err("missing Date"))?;
    let mut msg = Vec::new();
    while let Some(l) = lines.peek() {
        if let Some(m) = l.strip_prefix("    ") {
            msg.push(m);
        } else if l.is_empty() {
            msg.push("");
        } else {
            break;
        }
        lines.next();
    }
    let (subject, body) = split_message(&msg);
    Ok(Commit {
        sha,
        author_name,
        author_email,
        author_date,
        subject,
        body,
    })
}

fn strip_patch_prefix(subject: &str) -> &str {
    let s = subject.trim_start();
    if s.starts_with('[') {
        if let Some(end) = s.find(']') {
            return s[end + 1..].trim_start();
        }
    }
    s
}

fn parse_mail_header(lines: &mut Lines<'_>, sha: String) -> Result<Commit, ParseError> {
    let mut author = None;
    let mut date = None;
    let mut subject: Option<String> = None;
    let mut in_subject = false;
    while let Some(l) = lines.peek() {
        if l.is_empty() {
            lines.next();
            break;
        }
        let lineno = lines.lineno();
        lines.next();
        if in_subject && (l.starts_with(' ') || l.starts_with('\t')) {
            if let Some(s) = subject.as_mut() {
                s.push(' ');
                s.push_str(l.trim());
            }
            continue;
        }
        in_subject = false;
        if let Some(a) = l.strip_prefix("From:") {
            author = Some(split_name_email(a));
        } else if let Some(d) = l.strip_prefix("Date:") {
            date = Some(parse_date(d).ok_or_else(|| ParseError::MalformedHeader {
                line: lineno,
                detail: format!("unparseable date `{}`", d.trim()),
            })?);
        } else if let Some(s) = l.strip_prefix("Subject:") {
            subject = Some(s.trim().to_owned());
            in_subject = true;
        }
    }
    let (author_name, author_email) = author.ok_or_else(|| lines.header_err("missing From"))?;
    let author_date = date.ok_or_else(|| lines.header_err("missing Date"))?;
    let subject = subject.ok_or_else(|| lines.header_err("missing Subject"))?;
    let mut body = Vec::new();
    while let Some(l) = lines.peek() {
        if l == "---" || l.starts_with("diff --git ") {
            break;
        }
        body.push(l);
        lines.next();
    }
    let (_, body) = split_message(&std::iter::once("x").chain(body).collect::<Vec<_>>());
    Ok(Commit {
        sha,
        author_name,
        author_email,
        author_date,
        subject: strip_patch_prefix(&subject).to_owned(),
        body,
    })
}

/// Decodes a git C-style quoted path (`"a/\303\251t\303\251.c"`).
fn unquote(s: &str) -> Option<(String, &str)> {
    let inner = s.strip_prefix('"')?;
    let mut out: Vec<u8> = Vec::new();
    let bytes = inner.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => return Some((String::from_utf8_lossy(&out).into_owned(), &inner[i + 1..])),
            b'\\' => {
                let c = *bytes.get(i + 1)?;
                i += 2;
                match c {
                    b'a' => out.push(7),
                    b'b' => out.push(8),
                    b't' => out.push(b'\t'),
                    b'n' => out.push(b'\n'),
                    b'v' => out.push(11),
                    b'f' => out.push(12),
                    b'r' => out.push(b'\r'),
                    b'0'..=b'7' => {
                        let digits = inner.get(i - 1..i + 2)?;
                        out.push(u8::from_str_radix(digits, 8).ok()?);
                        i += 2;
                    }
                    other => out.push(other),
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    None
}

fn needs_quoting(path: &str) -> bool {
    path.bytes()
        .any(|b| b == b'"' || b == b'\\' || b < 0x20 || b >= 0x7f)
}

fn quote(path: &str) -> String {
    if !needs_quoting(path) {
        return path.to_owned();
    }
    let mut out = String::from("\"");
    for b in path.bytes() {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'\t' => out.push_str("\\t"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\{b:03o}");
            }
        }
    }
    out.push('"');
    out
}

fn strip_side(path: &str, side: char) -> String {
    if path == DEV_NULL {
        return path.to_owned();
    }
    let prefix = [side, '/'];
    let p: String = prefix.iter().collect();
    path.strip_prefix(p.as_str()).unwrap_or(path).to_owned()
}

/// Path from a `---`/`+++`/`rename from` style line value.
fn header_path(value: &str, side: Option<char>) -> String {
    let raw = if value.starts_with('"') {
        unquote(value)
            .map(|(p, _)| p)
            .unwrap_or_else(|| value.to_owned())
    } else {
        value.split('\t').next().unwrap_or(value).to_owned()
    };
    match side {
        Some(s) => strip_side(&raw, s),
        None => raw,
    }
}

fn parse_diff_git_paths(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let (a, tail) = unquote(rest)?;
        let tail = tail.trim_start();
        let b = if tail.starts_with('"') {
            unquote(tail)?.0
        } else {
            tail.to_owned()
        };
        return Some((strip_side(&a, 'a'), strip_side(&b, 'b')));
    }
    if let Some(pos) = rest.find(" \"") {
        let (b, _) = unquote(&rest[pos + 1..])?;
        return Some((strip_side(&rest[..pos], 'a'), strip_side(&b, 'b')));
    }
    // Same name on both sides: split down the middle so spaces are allowed.
    if rest.len() % 2 == 1 {
        let mid = rest.len() / 2;
        if rest.is_char_boundary(mid) && rest.as_bytes()[mid] == b' ' {
            let (a, b) = (&rest[..mid], &rest[mid + 1..]);
            if a.starts_with("a/") && b.starts_with("b/") && a[2..] == b[2..] {
                return Some((a[2..].to_owned(), b[2..].to_owned()));
            }
        }
    }
    let pos = rest.find(" b/")?;
    Some((
        strip_side(&rest[..pos], 'a'),
        strip_side(&rest[pos + 1..], 'b'),
    ))
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    match s.split_once(',') {
        Some((start, count)) => Some((start.parse().ok()?, count.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<(u32, u32, u32, u32)> {
    let rest = line.strip_prefix("@@ -")?;
    let end = rest.find(" @@")?;
    let (old, new) = rest[..end].split_once(" +")?;
    let (os, oc) = parse_range(old)?;
    let (ns, nc) = parse_range(new)?;
    Some((os, oc, ns, nc))
}

fn parse_hunk(lines: &mut Lines<'_>) -> Result<Hunk, ParseError> {
    let header_line = lines.lineno();
    let header = lines.next().unwrap_or_default();
    let (old_start, old_count, new_start, new_count) =
        parse_hunk_header(header).ok_or_else(|| ParseError::MalformedHunk {
            line: header_line,
            detail: format!("bad hunk header `{header}`"),
        })?;
    let (mut old_left, mut new_left) = (old_count, new_count);
    let mut out = Vec::new();
    while old_left > 0 || new_left > 0 {
        let lineno = lines.lineno();
        let Some(l) = lines.next() else {
            return Err(ParseError::MalformedHunk {
                line: lineno,
                detail: format!(
                    "input ended with {old_left} old / {new_left} new lines outstanding"
                ),
            });
        };
        let (tag, text) = match l.as_bytes().first() {
            Some(b' ') => (LineTag::Context, &l[1..]),
            // Some mailers strip the lone space of an empty context line.
            None => (LineTag::Context, ""),
            Some(b'+') => (LineTag::Added, &l[1..]),
            Some(b'-') => (LineTag::Removed, &l[1..]),
            Some(b'\\') => continue,
            _ => {
                return Err(ParseError::MalformedHunk {
                    line: lineno,
                    detail: format!(
                        "unexpected line with {old_left} old / {new_left} new lines outstanding"
                    ),
                })
            }
        };
        let (uses_old, uses_new) = match tag {
            LineTag::Context => (true, true),
            LineTag::Added => (false, true),
            LineTag::Removed => (true, false),
        };
        if (uses_old && old_left == 0) || (uses_new && new_left == 0) {
            return Err(ParseError::MalformedHunk {
                line: lineno,
                detail: "more lines than the hunk header declares".into(),
            });
        }
        old_left -= u32::from(uses_old);
        new_left -= u32::from(uses_new);
        out.push(HunkLine {
            tag,
            text: text.to_owned(),
        });
    }
    if lines.peek().is_some_and(|l| l.starts_with('\\')) {
        lines.next();
    }
    // An immediately following payload line means the header undercounted.
    if let Some(l) = lines.peek() {
        let stray = l.starts_with('+') || l.starts_with(' ') || (l.starts_with('-') && l != "-- ");
        if stray && !l.starts_with("--- ") && !l.starts_with("+++ ") {
            return Err(ParseError::MalformedHunk {
                line: lines.lineno(),
                detail: "more lines than the hunk header declares".into(),
            });
        }
    }
    Ok(Hunk {
        old_start,
        old_count,
        new_start,
        new_count,
        lines: out,
    })
}

fn parse_diff_sections(lines: &mut Lines<'_>) -> Result<Vec<FileChange>, ParseError> {
    let mut files: Vec<FileChange> = Vec::new();
    let mut seen = HashSet::new();
    while let Some(l) = lines.peek() {
        let Some(rest) = l.strip_prefix("diff --git ") else {
            lines.next();
            continue;
        };
        let header_line = lines.lineno();
        lines.next();
        let (mut old_path, mut new_path) =
            parse_diff_git_paths(rest).ok_or_else(|| ParseError::MalformedHeader {
                line: header_line,
                detail: "unparseable `diff --git` paths".into(),
            })?;
        let mut kind = ChangeKind::Modify;
        let mut binary = false;
        let mut hunks = Vec::new();
        while let Some(l) = lines.peek() {
            if l.starts_with("diff --git ") {
                break;
            }
            if l.starts_with("@@ ") {
                hunks.push(parse_hunk(lines)?);
                continue;
            }
            if !hunks.is_empty() {
                // Trailing material after the last hunk (mail signature, next commit).
                break;
            }
            lines.next();
            if l.starts_with("new file mode") {
                kind = ChangeKind::Add;
            } else if l.starts_with("deleted file mode") {
                kind = ChangeKind::Delete;
            } else if let Some(p) = l.strip_prefix("rename from ") {
                kind = ChangeKind::Rename;
                old_path = header_path(p, None);
            } else if let Some(p) = l.strip_prefix("rename to ") {
                kind = ChangeKind::Rename;
                new_path = header_path(p, None);
            } else if let Some(p) = l.strip_prefix("copy from ") {
                old_path = header_path(p, None);
            } else if let Some(p) = l.strip_prefix("copy to ") {
                kind = ChangeKind::Add;
                new_path = header_path(p, None);
            } else if let Some(p) = l.strip_prefix("--- ") {
                let p = header_path(p, Some('a'));
                if p != DEV_NULL {
                    old_path = p;
                }
            } else if let Some(p) = l.strip_prefix("+++ ") {
                let p = header_path(p, Some('b'));
                if p != DEV_NULL {
                    new_path = p;
                }
            } else if l.starts_with("Binary files ") && l.ends_with(" differ") {
                binary = true;
            } else if l == "GIT binary patch" {
                binary = true;
                while lines.peek().is_some_and(|l| !l.starts_with("diff --git ")) {
                    lines.next();
                }
            }
        }
        match kind {
            ChangeKind::Add => old_path = DEV_NULL.to_owned(),
            ChangeKind::Delete => new_path = DEV_NULL.to_owned(),
            ChangeKind::Modify if old_path != new_path => kind = ChangeKind::Rename,
            _ => {}
        }
        if !seen.insert((old_path.clone(), new_path.clone())) {
            return Err(ParseError::MalformedHeader {
                line: header_line,
                detail: format!("duplicate file section for `{new_path}`"),
            });
        }
        files.push(FileChange {
            old_path,
            new_path,
            kind,
            binary,
            hunks,
        });
    }
    Ok(files)
}

/// Renders a patch in the canonical template, with a git-style unified diff.
pub fn render_patch(patch: &Patch) -> String {
    let c = &patch.commit;
    let mut out = String::new();
    let _ = writeln!(out, "commit {}", c.sha);
    let _ = writeln!(out, "author {}", c.author_name);
    let _ = writeln!(out, "email {}", c.author_email);
    let _ = writeln!(out, "date {}", c.author_date);
    let _ = writeln!(out, "subject {}", c.subject);
    out.push_str("body-begin\n");
    out.push_str(&c.body);
    out.push_str("\nbody-end\n");
    if !patch.files.is_empty() {
        out.push('\n');
        out.push_str(&render_diff(&patch.files));
    }
    out
}

fn side_path(side: &str, path: &str) -> String {
    if path == DEV_NULL {
        return DEV_NULL.to_owned();
    }
    let joined = format!("{side}/{path}");
    if needs_quoting(&joined) {
        quote(&joined)
    } else if joined.contains(' ') {
        format!("{joined}\t")
    } else {
        joined
    }
}

/// Unified diff text for a list of file changes.
pub fn render_diff(files: &[FileChange]) -> String {
    let mut out = String::new();
    for f in files {
        let (a, b) = match f.kind {
            ChangeKind::Add => (&f.new_path, &f.new_path),
            ChangeKind::Delete => (&f.old_path, &f.old_path),
            _ => (&f.old_path, &f.new_path),
        };
        let _ = writeln!(
            out,
            "diff --git {} {}",
            quote(&format!("a/{a}")),
            quote(&format!("b/{b}"))
        );
        match f.kind {
            ChangeKind::Add => out.push_str("new file mode 100644\n"),
            ChangeKind::Delete => out.push_str("deleted file mode 100644\n"),
            ChangeKind::Rename => {
                let _ = writeln!(
                    out,
                    "similarity index 90%\nrename from {}\nrename to {}",
                    quote(&f.old_path),
                    quote(&f.new_path)
                );
            }
            ChangeKind::Modify => {}
        }
        if f.binary {
            let _ = writeln!(
                out,
                "Binary files {} and {} differ",
                side_path("a", &f.old_path).trim_end(),
                side_path("b", &f.new_path).trim_end()
            );
        } else if !f.hunks.is_empty() {
            let _ = writeln!(out, "--- {}", side_path("a", &f.old_path));
            let _ = writeln!(out, "+++ {}", side_path("b", &f.new_path));
            for h in &f.hunks {
                let _ = writeln!(
                    out,
                    "@@ -{},{} +{},{} @@",
                    h.old_start, h.old_count, h.new_start, h.new_count
                );
                for l in &h.lines {
                    out.push(l.tag.marker());
                    out.push_str(&l.text);
                    out.push('\n');
                }
            }
        }
    }
    out
}
