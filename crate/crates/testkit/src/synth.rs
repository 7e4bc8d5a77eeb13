//! Random inputs: tiny models, encoded patches, and kernel-looking patches.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use patchbot_core::bundle::Bundle;
use patchbot_core::classifier::{train, ModelConfig, ModelError, ModelParams};
use patchbot_core::ingest::{Label, LabelSource, LabeledPatch};
use patchbot_core::patch::{ChangeKind, Commit, FileChange, Hunk, HunkLine, LineTag, Patch};
use patchbot_core::preprocess::{
    build_vocab, code_tokens, message_tokens, prepare_corpus, EncodeConfig, EncodedFile,
    EncodedPatch, VocabKind,
};

pub const TINY_MSG_VOCAB: usize = 9;
pub const TINY_CODE_VOCAB: usize = 7;

/// d=2, one filter per width, H=2, short sequences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 2,
        filters: 1,
        widths: vec![1, 2, 3],
        hidden: 2,
        encode: EncodeConfig {
            max_msg_tokens: 7,
            max_files: 3,
            max_lines: 3,
            max_line_tokens: 4,
        },
        ..Default::default()
    }
}

/// Parameters drawn uniformly from `[-scale, scale]`, biases included,
/// PAD rows left at zero.
pub fn random_params(
    cfg: &ModelConfig,
    msg_vocab: usize,
    code_vocab: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    let mut p = ModelParams::zeros(cfg, msg_vocab, code_vocab);
    for g in p.groups_mut() {
        for v in g.values.iter_mut() {
            *v = rng.random_range(-scale..=scale);
        }
    }
    let d = cfg.embed_dim;
    p.emb_msg.row_mut(0).copy_from_slice(&vec![0.0; d]);
    p.emb_code.row_mut(0).copy_from_slice(&vec![0.0; d]);
    p
}

fn random_ids(len: usize, vocab: usize, pad_chance: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..len)
        .map(|_| {
            if rng.random_bool(pad_chance) {
                0
            } else {
                rng.random_range(1..vocab as u32)
            }
        })
        .collect()
}

/// A shape-valid encoded patch for `cfg`, with PAD tails, blank rows and
/// sometimes no files at all.
pub fn random_encoded(
    cfg: &EncodeConfig,
    msg_vocab: usize,
    code_vocab: usize,
    rng: &mut ChaCha8Rng,
) -> EncodedPatch {
    let mut msg_ids = random_ids(cfg.max_msg_tokens, msg_vocab, 0.15, rng);
    let tail = rng.random_range(0..cfg.max_msg_tokens);
    for id in &mut msg_ids[cfg.max_msg_tokens - tail..] {
        *id = 0;
    }
    let n_files = rng.random_range(0..=cfg.max_files);
    let side = |rng: &mut ChaCha8Rng| -> Vec<Vec<u32>> {
        let used = rng.random_range(0..=cfg.max_lines);
        (0..cfg.max_lines)
            .map(|r| {
                if r < used {
                    random_ids(cfg.max_line_tokens, code_vocab, 0.3, rng)
                } else {
                    vec![0; cfg.max_line_tokens]
                }
            })
            .collect()
    };
    let files = (0..n_files)
        .map(|_| EncodedFile {
            removed_ids: side(rng),
            added_ids: side(rng),
        })
        .collect();
    EncodedPatch {
        sha: format!("{:040x}", rng.random::<u128>()),
        msg_ids,
        files,
        label: Some(rng.random_range(0..=1)),
    }
}

const SUBSYSTEMS: &[&str] = &[
    "kernel/sched",
    "mm",
    "fs/ext4",
    "fs/btrfs",
    "drivers/net/ethernet/intel",
    "drivers/gpu/drm",
    "net/ipv4",
    "arch/x86/kvm",
    "sound/soc",
    "block",
];

const FILES: &[&str] = &[
    "core.c", "main.c", "inode.c", "util.h", "ops.c", "debug.c", "Kconfig", "Makefile",
];

const WORDS: &[&str] = &[
    "the", "a", "of", "to", "in", "and", "for", "when", "on", "is", "this", "that", "with",
    "driver", "path", "memory", "lock", "queue", "buffer", "device", "list", "entry", "handler",
    "callback", "state", "update", "use", "add", "remove", "refactor", "cleanup", "rename",
    "convert", "move", "helper", "support", "check", "error", "return", "value", "pointer",
    "struct", "field", "count", "size", "init", "exit", "probe", "release", "reset", "timer",
    "irq", "page", "cache", "map", "table", "commit", "series", "previous", "instead", "now",
    "also", "since", "only", "not", "be", "can", "may", "should", "will", "code", "comment",
];

const CODE_LINES: &[&str] = &[
    "\tif (!ptr)",
    "\t\treturn -ENOMEM;",
    "\tspin_lock(&dev->lock);",
    "\tspin_unlock(&dev->lock);",
    "\tkfree(buf);",
    "\tbuf = kzalloc(size, GFP_KERNEL);",
    "\tret = device_register(dev);",
    "\tlist_del(&entry->list);",
    "\tmutex_lock(&priv->mutex);",
    "\tmutex_unlock(&priv->mutex);",
    "\tpr_info(\"%s: ready\\n\", name);",
    "\tfor (i = 0; i < n; i++)",
    "\t\tcount += page->refs[i];",
    "\tatomic_inc(&obj->ref);",
    "\tgoto out;",
    "out:",
    "\treturn ret;",
    "static int foo_probe(struct platform_device *pdev)",
    "{",
    "}",
];

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| (*WORDS.choose(rng).unwrap()).to_owned())
        .collect()
}

fn random_hunk(rng: &mut ChaCha8Rng) -> Hunk {
    let mut lines = Vec::new();
    for _ in 0..rng.random_range(0..3) {
        lines.push(HunkLine {
            tag: LineTag::Context,
            text: (*CODE_LINES.choose(rng).unwrap()).into(),
        });
    }
    for _ in 0..rng.random_range(0..4) {
        lines.push(HunkLine {
            tag: LineTag::Removed,
            text: (*CODE_LINES.choose(rng).unwrap()).into(),
        });
    }
    for _ in 0..rng.random_range(1..5) {
        lines.push(HunkLine {
            tag: LineTag::Added,
            text: (*CODE_LINES.choose(rng).unwrap()).into(),
        });
    }
    if rng.random_bool(0.5) {
        lines.push(HunkLine {
            tag: LineTag::Context,
            text: String::new(),
        });
    }
    let old_count = lines.iter().filter(|l| l.tag != LineTag::Added).count() as u32;
    let new_count = lines.iter().filter(|l| l.tag != LineTag::Removed).count() as u32;
    let old_start = rng.random_range(1..500);
    Hunk {
        old_start,
        old_count,
        new_start: old_start + rng.random_range(0..3),
        new_count,
        lines,
    }
}

pub fn random_path(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}/{}",
        SUBSYSTEMS.choose(rng).unwrap(),
        FILES.choose(rng).unwrap()
    )
}

fn random_file(rng: &mut ChaCha8Rng) -> FileChange {
    let path = random_path(rng);
    let hunks: Vec<Hunk> = (0..rng.random_range(1..3))
        .map(|_| random_hunk(rng))
        .collect();
    FileChange {
        old_path: path.clone(),
        new_path: path,
        kind: ChangeKind::Modify,
        binary: false,
        hunks,
    }
}

/// A kernel-looking patch; `extra` words are spliced into the message body.
pub fn random_patch(rng: &mut ChaCha8Rng, extra: &[&str]) -> Patch {
    let subject_len = rng.random_range(3..8);
    let subject = format!(
        "{}: {}",
        SUBSYSTEMS.choose(rng).unwrap().rsplit('/').next().unwrap(),
        sentence(rng, subject_len).join(" ")
    );
    let body_len = rng.random_range(6..16);
    let mut body = sentence(rng, body_len);
    for w in extra {
        let at = rng.random_range(0..=body.len());
        body.insert(at, (*w).to_owned());
    }
    let mut files = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let f = random_file(rng);
        if !files.iter().any(|g: &FileChange| g.new_path == f.new_path) {
            files.push(f);
        }
    }
    Patch {
        commit: Commit {
            sha: format!("{:040x}", rng.random::<u128>()),
            author_name: "Dev Eloper".into(),
            author_email: "dev@example.org".into(),
            author_date: 1_600_000_000 + rng.random_range(0..10_000_000),
            subject,
            body: body.join(" ") + "\n\nSigned-off-by: Dev Eloper <dev@example.org>",
        },
        files,
    }
}

pub const PLANTED_TOKEN: &str = "fixplant";

/// Patches labelled bug-fix iff the message contains [`PLANTED_TOKEN`];
/// classes alternate so both are always present.
pub fn planted_corpus(n: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledPatch> {
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let patch = random_patch(rng, if positive { &[PLANTED_TOKEN] } else { &[] });
            let label = if positive {
                Label::BugFix
            } else {
                Label::NonBugFix
            };
            LabeledPatch {
                patch,
                label,
                source: LabelSource::CorpusFile,
            }
        })
        .collect()
}

/// Hyperparameters for the planted-keyword corpus. From the ±0.05 start,
/// the default 32-wide model sits on a loss plateau for 20-30 epochs; the
/// wider model and larger step leave it within about 12.
pub fn planted_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 64,
        filters: 64,
        hidden: 64,
        learning_rate: 1.0,
        batch_size: 8,
        epochs: 20,
        ..Default::default()
    }
}

/// A bundle over vocabularies built from `patches`, with random weights.
pub fn random_bundle(patches: &[Patch], scale: f64, rng: &mut ChaCha8Rng) -> Bundle {
    let config = ModelConfig {
        embed_dim: 4,
        filters: 3,
        hidden: 4,
        ..Default::default()
    };
    let vocab_msg = build_vocab(patches.iter().map(message_tokens), VocabKind::Message, 1);
    let vocab_code = build_vocab(patches.iter().flat_map(code_tokens), VocabKind::Code, 1);
    let params = random_params(&config, vocab_msg.len(), vocab_code.len(), scale, rng);
    Bundle {
        params,
        config,
        vocab_msg,
        vocab_code,
    }
}

/// Trains a bundle on `corpus` with vocabularies built from it.
pub fn train_bundle(corpus: &[LabeledPatch], config: &ModelConfig) -> Result<Bundle, ModelError> {
    let (vocab_msg, vocab_code, encoded) = prepare_corpus(
        corpus,
        &config.encode,
        config.min_freq_msg,
        config.min_freq_code,
    )?;
    let (params, _) = train(&encoded, vocab_msg.len(), vocab_code.len(), config)?;
    Ok(Bundle {
        params,
        config: config.clone(),
        vocab_msg,
        vocab_code,
    })
}
