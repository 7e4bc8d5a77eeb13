//! Bug-fix classifier: a convolutional message branch and a max/mean pooled
//! code branch feeding one hidden layer and a sigmoid output.
//!
//! Message branch: token embeddings, one 1-D convolution per window width,
//! ReLU, then max over positions. Windows made only of padding are masked.
//!
//! Code branch: each code line is the mean of its token embeddings; each side
//! (removed/added) of a file is the elementwise max over its lines; the patch
//! vector is the elementwise max over `[removed, added]` file vectors, so the
//! score does not depend on file order.
//!
//! All arithmetic is `f64`. Max-pool gradients go to the first maximal
//! position.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{EncodeConfig, EncodedPatch, PAD};

/// Probabilities are clamped to `[LOSS_CLAMP, 1 - LOSS_CLAMP]` inside the loss.
pub const LOSS_CLAMP: f64 = 1e-12;
const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate corpus: {0}")]
    DegenerateCorpus(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error("unsupported bundle version `{found}`")]
    VersionMismatch { found: String },
    #[error("a training run already holds {0}")]
    TrainingInProgress(String),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub encode: EncodeConfig,
    pub min_freq_msg: u32,
    pub min_freq_code: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            filters: 16,
            widths: vec![1, 2, 3],
            hidden: 32,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            l2: 1e-4,
            seed: 42,
            encode: EncodeConfig::default(),
            min_freq_msg: 3,
            min_freq_code: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.embed_dim == 0 || self.filters == 0 || self.hidden == 0 {
            return bad("dimensions must be positive");
        }
        if self.widths.is_empty()
            || self
                .widths
                .iter()
                .any(|&w| w == 0 || w > self.encode.max_msg_tokens)
        {
            return bad("window widths must lie in 1..=max_msg_tokens");
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return bad("learning rate, epochs and batch size must be positive");
        }
        if self.min_freq_msg == 0 || self.min_freq_code == 0 {
            return bad("min_freq must be at least 1");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        self.encode.validate().map_err(ModelError::InvalidConfig)
    }

    /// Width of the concatenated message and code features.
    pub fn feature_dim(&self) -> usize {
        self.widths.len() * self.filters + 2 * self.embed_dim
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub width: usize,
    /// `(width * embed_dim) x filters`; row `r * embed_dim + c` pairs window
    /// offset `r` with embedding component `c`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub emb_msg: Matrix,
    pub emb_code: Matrix,
    pub conv: Vec<ConvLayer>,
    /// `feature_dim x hidden`.
    pub hidden_w: Matrix,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

/// A named view of one parameter tensor, in serialization order.
pub struct ParamGroup<'a> {
    pub name: String,
    pub values: &'a [f64],
    pub regularized: bool,
}

pub struct ParamGroupMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub regularized: bool,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig, msg_vocab: usize, code_vocab: usize) -> Self {
        let (d, nf, h) = (cfg.embed_dim, cfg.filters, cfg.hidden);
        ModelParams {
            emb_msg: Matrix::zeros(msg_vocab, d),
            emb_code: Matrix::zeros(code_vocab, d),
            conv: cfg
                .widths
                .iter()
                .map(|&w| ConvLayer {
                    width: w,
                    weight: Matrix::zeros(w * d, nf),
                    bias: vec![0.0; nf],
                })
                .collect(),
            hidden_w: Matrix::zeros(cfg.feature_dim(), h),
            hidden_b: vec![0.0; h],
            out_w: vec![0.0; h],
            out_b: 0.0,
        }
    }

    /// Weights drawn from uniform(-0.05, 0.05) in serialization order; biases
    /// and the padding embedding rows are zero.
    pub fn init(cfg: &ModelConfig, msg_vocab: usize, code_vocab: usize) -> Self {
        let mut params = Self::zeros(cfg, msg_vocab, code_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for g in params.groups_mut() {
            if g.regularized {
                for v in g.values.iter_mut() {
                    *v = rng.random_range(-INIT_RANGE..INIT_RANGE);
                }
            }
        }
        params.emb_msg.row_mut(PAD as usize).fill(0.0);
        params.emb_code.row_mut(PAD as usize).fill(0.0);
        params
    }

    pub fn embed_dim(&self) -> usize {
        self.emb_msg.cols
    }

    pub fn filters(&self) -> usize {
        self.conv.first().map_or(0, |c| c.bias.len())
    }

    pub fn hidden(&self) -> usize {
        self.hidden_b.len()
    }

    pub fn groups(&self) -> Vec<ParamGroup<'_>> {
        let mut out = vec![
            ParamGroup {
                name: "emb_msg".into(),
                values: self.emb_msg.data(),
                regularized: true,
            },
            ParamGroup {
                name: "emb_code".into(),
                values: self.emb_code.data(),
                regularized: true,
            },
        ];
        for c in &self.conv {
            out.push(ParamGroup {
                name: format!("conv{}_w", c.width),
                values: c.weight.data(),
                regularized: true,
            });
            out.push(ParamGroup {
                name: format!("conv{}_b", c.width),
                values: &c.bias,
                regularized: false,
            });
        }
        out.push(ParamGroup {
            name: "hidden_w".into(),
            values: self.hidden_w.data(),
            regularized: true,
        });
        out.push(ParamGroup {
            name: "hidden_b".into(),
            values: &self.hidden_b,
            regularized: false,
        });
        out.push(ParamGroup {
            name: "out_w".into(),
            values: &self.out_w,
            regularized: true,
        });
        out.push(ParamGroup {
            name: "out_b".into(),
            values: std::slice::from_ref(&self.out_b),
            regularized: false,
        });
        out
    }

    pub fn groups_mut(&mut self) -> Vec<ParamGroupMut<'_>> {
        let mut out = vec![
            ParamGroupMut {
                name: "emb_msg".into(),
                values: self.emb_msg.data_mut(),
                regularized: true,
            },
            ParamGroupMut {
                name: "emb_code".into(),
                values: self.emb_code.data_mut(),
                regularized: true,
            },
        ];
        for c in &mut self.conv {
            let w = c.width;
            out.push(ParamGroupMut {
                name: format!("conv{w}_w"),
                values: c.weight.data_mut(),
                regularized: true,
            });
            out.push(ParamGroupMut {
                name: format!("conv{w}_b"),
                values: &mut c.bias,
                regularized: false,
            });
        }
        out.push(ParamGroupMut {
            name: "hidden_w".into(),
            values: self.hidden_w.data_mut(),
            regularized: true,
        });
        out.push(ParamGroupMut {
            name: "hidden_b".into(),
            values: &mut self.hidden_b,
            regularized: false,
        });
        out.push(ParamGroupMut {
            name: "out_w".into(),
            values: &mut self.out_w,
            regularized: true,
        });
        out.push(ParamGroupMut {
            name: "out_b".into(),
            values: std::slice::from_mut(&mut self.out_b),
            regularized: false,
        });
        out
    }

    pub fn num_values(&self) -> usize {
        self.groups().iter().map(|g| g.values.len()).sum()
    }

    /// Sum of squares over non-bias parameters.
    pub fn weight_sq_norm(&self) -> f64 {
        self.groups()
            .iter()
            .filter(|g| g.regularized)
            .flat_map(|g| g.values.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|g| g.values.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, group by group.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (a, b) in dst.values.iter_mut().zip(src.values) {
                *a += scale * b;
            }
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for g in z.groups_mut() {
            g.values.fill(0.0);
        }
        z
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Keeps a probability strictly inside (0, 1).
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

struct ConvTrace {
    /// positions x filters pre-activations; masked windows stay `None`.
    pre: Vec<Option<Vec<f64>>>,
    argmax: Vec<Option<usize>>,
}

struct SideTrace {
    /// Non-padding token ids of every non-empty row.
    rows: Vec<Vec<u32>>,
    values: Vec<f64>,
    argmax: Vec<Option<usize>>,
}

struct Trace {
    conv: Vec<ConvTrace>,
    /// `[removed, added]` per file.
    sides: Vec<[SideTrace; 2]>,
    file_argmax: Vec<Option<usize>>,
    z: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    score: f64,
}

fn check_ids(
    ids: impl IntoIterator<Item = u32>,
    limit: usize,
    what: &str,
) -> Result<(), ModelError> {
    match ids.into_iter().find(|&id| id as usize >= limit) {
        Some(id) => Err(ModelError::ShapeMismatch(format!(
            "{what} id {id} outside vocabulary of {limit}"
        ))),
        None => Ok(()),
    }
}

/// Index of the first maximum; `None` when empty.
fn first_argmax(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

fn side_trace(rows: &[Vec<u32>], emb: &Matrix) -> SideTrace {
    let d = emb.cols;
    let rows: Vec<Vec<u32>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .copied()
                .filter(|&id| id != PAD)
                .collect::<Vec<_>>()
        })
        .filter(|r| !r.is_empty())
        .collect();
    let line_vecs: Vec<Vec<f64>> = rows
        .iter()
        .map(|ids| {
            let mut v = vec![0.0; d];
            for &id in ids {
                for (acc, e) in v.iter_mut().zip(emb.row(id as usize)) {
                    *acc += e;
                }
            }
            let n = ids.len() as f64;
            v.iter_mut().for_each(|x| *x /= n);
            v
        })
        .collect();
    let mut values = vec![0.0; d];
    let mut argmax = vec![None; d];
    for c in 0..d {
        if let Some((i, v)) = first_argmax(line_vecs.iter().map(|l| l[c])) {
            values[c] = v;
            argmax[c] = Some(i);
        }
    }
    SideTrace {
        rows,
        values,
        argmax,
    }
}

fn forward_trace(enc: &EncodedPatch, params: &ModelParams) -> Result<Trace, ModelError> {
    let d = params.embed_dim();
    let nf = params.filters();
    let hdim = params.hidden();
    let feature_dim = params.conv.len() * nf + 2 * d;
    if params.hidden_w.rows != feature_dim
        || params.hidden_w.cols != hdim
        || params.out_w.len() != hdim
    {
        return Err(ModelError::ShapeMismatch(
            "hidden layer dimensions disagree".into(),
        ));
    }
    check_ids(enc.msg_ids.iter().copied(), params.emb_msg.rows, "message")?;
    check_ids(
        enc.files
            .iter()
            .flat_map(|f| f.removed_ids.iter().chain(&f.added_ids))
            .flatten()
            .copied(),
        params.emb_code.rows,
        "code",
    )?;

    let mut z = Vec::with_capacity(feature_dim);
    let mut conv_traces = Vec::with_capacity(params.conv.len());
    let ids = &enc.msg_ids;
    for layer in &params.conv {
        let k = layer.width;
        if layer.weight.rows != k * d || layer.weight.cols != nf {
            return Err(ModelError::ShapeMismatch(format!("conv{k} weight shape")));
        }
        let positions = (ids.len() + 1).saturating_sub(k);
        let mut pre = Vec::with_capacity(positions);
        for t in 0..positions {
            let window = &ids[t..t + k];
            if window.iter().all(|&id| id == PAD) {
                pre.push(None);
                continue;
            }
            let mut acc = layer.bias.clone();
            for (r, &id) in window.iter().enumerate() {
                if id == PAD {
                    continue;
                }
                for (c, &e) in params.emb_msg.row(id as usize).iter().enumerate() {
                    for (a, w) in acc.iter_mut().zip(layer.weight.row(r * d + c)) {
                        *a += e * w;
                    }
                }
            }
            pre.push(Some(acc));
        }
        let mut argmax = vec![None; nf];
        for (j, slot) in argmax.iter_mut().enumerate() {
            let active = pre
                .iter()
                .enumerate()
                .filter_map(|(t, p)| p.as_ref().map(|p| (t, relu(p[j]))));
            let mut best: Option<(usize, f64)> = None;
            for (t, v) in active {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((t, v));
                }
            }
            z.push(best.map_or(0.0, |(_, v)| v));
            *slot = best.map(|(t, _)| t);
        }
        conv_traces.push(ConvTrace { pre, argmax });
    }

    let sides: Vec<[SideTrace; 2]> = enc
        .files
        .iter()
        .map(|f| {
            [
                side_trace(&f.removed_ids, &params.emb_code),
                side_trace(&f.added_ids, &params.emb_code),
            ]
        })
        .collect();
    let mut file_argmax = vec![None; 2 * d];
    for (c, slot) in file_argmax.iter_mut().enumerate() {
        let (side, comp) = (c / d, c % d);
        match first_argmax(sides.iter().map(|s| s[side].values[comp])) {
            Some((f, v)) => {
                z.push(v);
                *slot = Some(f);
            }
            None => z.push(0.0),
        }
    }

    let mut hidden_pre = params.hidden_b.clone();
    for (i, &zi) in z.iter().enumerate() {
        if zi == 0.0 {
            continue;
        }
        for (a, w) in hidden_pre.iter_mut().zip(params.hidden_w.row(i)) {
            *a += zi * w;
        }
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&x| relu(x)).collect();
    let logit = params.out_b
        + hidden
            .iter()
            .zip(&params.out_w)
            .map(|(h, w)| h * w)
            .sum::<f64>();
    let score = open_unit(sigmoid(logit));
    Ok(Trace {
        conv: conv_traces,
        sides,
        file_argmax,
        z,
        hidden_pre,
        hidden,
        score,
    })
}

/// Probability that `enc` is a bug fix.
pub fn forward(enc: &EncodedPatch, params: &ModelParams) -> Result<f64, ModelError> {
    forward_trace(enc, params).map(|t| t.score)
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP)
}

/// Mean binary cross-entropy plus `l2 * ||weights||^2`.
pub fn loss(scores: &[f64], labels: &[u8], params: &ModelParams, l2: f64) -> f64 {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let n = scores.len().max(1) as f64;
    let bce: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_prob(s);
            if y == 1 {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum::<f64>()
        / n;
    bce + l2 * params.weight_sq_norm()
}

fn label_of(enc: &EncodedPatch) -> Result<u8, ModelError> {
    match enc.label {
        Some(l @ (0 | 1)) => Ok(l),
        Some(l) => Err(ModelError::ShapeMismatch(format!(
            "label {l} is not 0 or 1 for {}",
            enc.sha
        ))),
        None => Err(ModelError::ShapeMismatch(format!(
            "missing label for {}",
            enc.sha
        ))),
    }
}

fn accumulate(
    trace: &Trace,
    enc: &EncodedPatch,
    params: &ModelParams,
    g_logit: f64,
    grads: &mut ModelParams,
) {
    let d = params.embed_dim();
    let nf = params.filters();
    grads.out_b += g_logit;
    let mut g_hidden_pre = vec![0.0; params.hidden()];
    for j in 0..params.hidden() {
        grads.out_w[j] += g_logit * trace.hidden[j];
        if trace.hidden_pre[j] > 0.0 {
            g_hidden_pre[j] = g_logit * params.out_w[j];
        }
    }
    let mut g_z = vec![0.0; trace.z.len()];
    for (i, &zi) in trace.z.iter().enumerate() {
        let w_row = params.hidden_w.row(i);
        let gw_row = grads.hidden_w.row_mut(i);
        let mut acc = 0.0;
        for j in 0..g_hidden_pre.len() {
            gw_row[j] += zi * g_hidden_pre[j];
            acc += w_row[j] * g_hidden_pre[j];
        }
        g_z[i] = acc;
    }
    for (j, g) in g_hidden_pre.iter().enumerate() {
        grads.hidden_b[j] += g;
    }

    for (li, (layer, ct)) in params.conv.iter().zip(&trace.conv).enumerate() {
        let k = layer.width;
        for j in 0..nf {
            let g = g_z[li * nf + j];
            let Some(t) = ct.argmax[j] else { continue };
            let pre = ct.pre[t].as_ref().expect("argmax is never a masked window");
            if pre[j] <= 0.0 || g == 0.0 {
                continue;
            }
            grads.conv[li].bias[j] += g;
            for r in 0..k {
                let id = enc.msg_ids[t + r];
                if id == PAD {
                    continue;
                }
                let emb = params.emb_msg.row(id as usize);
                for c in 0..d {
                    let wrow = r * d + c;
                    grads.conv[li].weight.data[wrow * nf + j] += g * emb[c];
                    grads.emb_msg.data[id as usize * d + c] += g * layer.weight.get(wrow, j);
                }
            }
        }
    }

    let code_offset = params.conv.len() * nf;
    for c in 0..2 * d {
        let g = g_z[code_offset + c];
        let Some(f) = trace.file_argmax[c] else {
            continue;
        };
        let side = &trace.sides[f][c / d];
        let comp = c % d;
        let Some(row) = side.argmax[comp] else {
            continue;
        };
        let ids = &side.rows[row];
        let share = g / ids.len() as f64;
        for &id in ids {
            grads.emb_code.data[id as usize * d + comp] += share;
        }
    }
}

/// Loss and its exact gradient over a labelled batch.
pub fn backward(
    batch: &[EncodedPatch],
    params: &ModelParams,
    l2: f64,
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut scores = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for enc in batch {
        let y = label_of(enc)?;
        let trace = forward_trace(enc, params)?;
        let s = trace.score;
        // Inside the clamp, d(bce)/d(logit) = s - y; outside it the loss is flat.
        if s > LOSS_CLAMP && s < 1.0 - LOSS_CLAMP {
            let g_logit = (s - f64::from(y)) / n;
            accumulate(&trace, enc, params, g_logit, &mut grads);
        }
        scores.push(s);
        labels.push(y);
    }
    if l2 != 0.0 {
        for (g, p) in grads.groups_mut().into_iter().zip(params.groups()) {
            if p.regularized {
                for (gv, pv) in g.values.iter_mut().zip(p.values) {
                    *gv += 2.0 * l2 * pv;
                }
            }
        }
    }
    Ok((loss(&scores, &labels, params, l2), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
        }
    }

    /// From `(predicted_positive, actually_positive)` pairs.
    pub fn from_predictions<I: IntoIterator<Item = (bool, bool)>>(pairs: I) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} tn={} fn={} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4}",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1
        )
    }
}

pub fn evaluate(
    params: &ModelParams,
    set: &[EncodedPatch],
    threshold: f64,
) -> Result<Metrics, ModelError> {
    let pairs = set
        .iter()
        .map(|e| Ok((forward(e, params)? >= threshold, label_of(e)? == 1)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Metrics::from_predictions(pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout: Option<Metrics>,
}

fn check_classes(corpus: &[EncodedPatch]) -> Result<(), ModelError> {
    let mut seen = [false; 2];
    for e in corpus {
        seen[label_of(e)? as usize] = true;
    }
    if seen != [true, true] {
        return Err(ModelError::DegenerateCorpus(
            "training data needs both classes".into(),
        ));
    }
    Ok(())
}

/// Trains on a seeded shuffle of `corpus`, holding out its last 10%.
pub fn train(
    corpus: &[EncodedPatch],
    msg_vocab: usize,
    code_vocab: usize,
    cfg: &ModelConfig,
) -> Result<(ModelParams, Vec<EpochLog>), ModelError> {
    check_classes(corpus)?;
    let mut shuffled: Vec<EncodedPatch> = corpus.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let holdout_len = if shuffled.len() >= 10 {
        shuffled.len() / 10
    } else {
        0
    };
    let holdout = shuffled.split_off(shuffled.len() - holdout_len);
    train_with_holdout(&shuffled, &holdout, msg_vocab, code_vocab, cfg)
}

/// Mini-batch gradient descent with a seeded per-epoch shuffle.
pub fn train_with_holdout(
    train_set: &[EncodedPatch],
    holdout: &[EncodedPatch],
    msg_vocab: usize,
    code_vocab: usize,
    cfg: &ModelConfig,
) -> Result<(ModelParams, Vec<EpochLog>), ModelError> {
    cfg.validate()?;
    check_classes(train_set)?;
    for e in train_set.iter().chain(holdout) {
        e.check_shape(&cfg.encode, msg_vocab, code_vocab)
            .map_err(ModelError::ShapeMismatch)?;
    }
    let mut params = ModelParams::init(cfg, msg_vocab, code_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<EncodedPatch> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (l, grads) = backward(&batch, &params, cfg.l2)?;
            loss_sum += l * chunk.len() as f64;
            params.add_scaled(&grads, -cfg.learning_rate);
        }
        if !params.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
        let holdout_metrics = if holdout.is_empty() {
            None
        } else {
            Some(evaluate(&params, holdout, 0.5)?)
        };
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            holdout: holdout_metrics,
        });
    }
    Ok((params, log))
}
