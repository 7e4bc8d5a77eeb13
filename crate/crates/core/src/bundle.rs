//! Deployable model bundle.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! manifest.json    version, model config, file names, SHA-256 checksums
//! params.bin       little-endian f64 values
//! vocab_msg.json
//! vocab_code.json
//! ```
//!
//! `params.bin` holds, in order: message embeddings (row-major), code
//! embeddings, each convolution's weight and bias by ascending width, the
//! hidden weight and bias, the output weight and bias.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{forward, ModelConfig, ModelError, ModelParams};
use crate::patch::Patch;
use crate::preprocess::{encode_patch, EncodedPatch, Vocab, VocabKind};

pub const BUNDLE_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_MSG_FILE: &str = "vocab_msg.json";
pub const VOCAB_CODE_FILE: &str = "vocab_code.json";
const LOCK_FILE: &str = ".train.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ModelConfig,
    pub vocab_msg: String,
    pub vocab_code: String,
    pub params: String,
    pub params_values: usize,
    pub checksums: Checksums,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub params: String,
    pub vocab_msg: String,
    pub vocab_code: String,
}

/// A loaded model with everything needed to score a new patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub vocab_msg: Vocab,
    pub vocab_code: Vocab,
}

impl Bundle {
    pub fn encode(&self, patch: &Patch) -> Result<EncodedPatch, ModelError> {
        Ok(encode_patch(
            patch,
            &self.vocab_msg,
            &self.vocab_code,
            &self.config.encode,
        )?)
    }

    pub fn score(&self, patch: &Patch) -> Result<f64, ModelError> {
        forward(&self.encode(patch)?, &self.params)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    params
        .groups()
        .iter()
        .flat_map(|g| g.values.iter())
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

pub fn params_from_bytes(
    bytes: &[u8],
    cfg: &ModelConfig,
    msg_vocab: usize,
    code_vocab: usize,
) -> Result<ModelParams, ModelError> {
    let mut params = ModelParams::zeros(cfg, msg_vocab, code_vocab);
    let expected = params.num_values() * 8;
    if bytes.len() != expected {
        return Err(ModelError::MalformedBundle(format!(
            "{PARAMS_FILE} has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut chunks = bytes.chunks_exact(8);
    for g in params.groups_mut() {
        for (v, c) in g.values.iter_mut().zip(&mut chunks) {
            *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
    }
    Ok(params)
}

pub fn save_model(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab_msg: &Vocab,
    vocab_code: &Vocab,
    dir: &Path,
) -> Result<Manifest, ModelError> {
    fs::create_dir_all(dir)?;
    if params.emb_msg.rows() != vocab_msg.len() || params.emb_code.rows() != vocab_code.len() {
        return Err(ModelError::ShapeMismatch(
            "embedding rows disagree with vocabulary sizes".into(),
        ));
    }
    let param_bytes = params_to_bytes(params);
    let msg_json = vocab_msg.to_json();
    let code_json = vocab_code.to_json();
    fs::write(dir.join(PARAMS_FILE), &param_bytes)?;
    fs::write(dir.join(VOCAB_MSG_FILE), &msg_json)?;
    fs::write(dir.join(VOCAB_CODE_FILE), &code_json)?;
    let manifest = Manifest {
        version: BUNDLE_VERSION.to_owned(),
        config: cfg.clone(),
        vocab_msg: VOCAB_MSG_FILE.to_owned(),
        vocab_code: VOCAB_CODE_FILE.to_owned(),
        params: PARAMS_FILE.to_owned(),
        params_values: params.num_values(),
        checksums: Checksums {
            params: sha256_hex(&param_bytes),
            vocab_msg: sha256_hex(msg_json.as_bytes()),
            vocab_code: sha256_hex(code_json.as_bytes()),
        },
    };
    // Manifest last: a bundle without one is incomplete.
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, checksum: &str) -> Result<Vec<u8>, ModelError> {
    if name.contains('/') || name.contains("..") {
        return Err(ModelError::MalformedBundle(format!(
            "file name `{name}` escapes the bundle"
        )));
    }
    let bytes = fs::read(dir.join(name))?;
    if sha256_hex(&bytes) != checksum {
        return Err(ModelError::ChecksumMismatch {
            file: name.to_owned(),
        });
    }
    Ok(bytes)
}

pub fn load_model(dir: &Path) -> Result<Bundle, ModelError> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let raw: serde_json::Value = serde_json::from_str(&manifest_text)?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>");
    if version != BUNDLE_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version.to_owned(),
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    manifest.config.validate()?;
    let msg = read_checked(dir, &manifest.vocab_msg, &manifest.checksums.vocab_msg)?;
    let code = read_checked(dir, &manifest.vocab_code, &manifest.checksums.vocab_code)?;
    let vocab_msg = Vocab::from_json(&String::from_utf8_lossy(&msg))?;
    let vocab_code = Vocab::from_json(&String::from_utf8_lossy(&code))?;
    if vocab_msg.kind() != VocabKind::Message || vocab_code.kind() != VocabKind::Code {
        return Err(ModelError::MalformedBundle(
            "vocabulary files have the wrong kinds".into(),
        ));
    }
    let bytes = read_checked(dir, &manifest.params, &manifest.checksums.params)?;
    let params = params_from_bytes(&bytes, &manifest.config, vocab_msg.len(), vocab_code.len())?;
    Ok(Bundle {
        params,
        config: manifest.config,
        vocab_msg,
        vocab_code,
    })
}

/// Exclusive claim on a bundle directory for one training run.
#[derive(Debug)]
pub struct TrainLock {
    path: PathBuf,
}

impl TrainLock {
    pub fn acquire(dir: &Path) -> Result<Self, ModelError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(TrainLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ModelError::TrainingInProgress(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for TrainLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
