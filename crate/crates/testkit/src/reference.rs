//! Straight-line re-implementation of the scorer and its loss, used to check
//! the production forward pass and, through finite differences, backprop.
//! Nothing here calls into `patchbot_core::classifier` arithmetic.

use patchbot_core::classifier::{Matrix, ModelParams};
use patchbot_core::preprocess::EncodedPatch;

fn embedding(m: &Matrix, id: u32) -> Vec<f64> {
    if id == 0 {
        return vec![0.0; m.cols()];
    }
    (0..m.cols()).map(|c| m.get(id as usize, c)).collect()
}

fn side_vector(rows: &[Vec<u32>], emb: &Matrix) -> Vec<f64> {
    let d = emb.cols();
    let mut line_vectors = Vec::new();
    for row in rows {
        let ids: Vec<u32> = row.iter().copied().filter(|&id| id != 0).collect();
        if ids.is_empty() {
            continue;
        }
        let mut v = vec![0.0; d];
        for id in &ids {
            let e = embedding(emb, *id);
            for c in 0..d {
                v[c] += e[c];
            }
        }
        for x in &mut v {
            *x /= ids.len() as f64;
        }
        line_vectors.push(v);
    }
    if line_vectors.is_empty() {
        return vec![0.0; d];
    }
    (0..d)
        .map(|c| {
            line_vectors
                .iter()
                .map(|l| l[c])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Concatenated message and code features.
pub fn features(enc: &EncodedPatch, p: &ModelParams) -> Vec<f64> {
    let d = p.emb_msg.cols();
    let ids = &enc.msg_ids;
    let mut z = Vec::new();
    for layer in &p.conv {
        let k = layer.width;
        let nf = layer.bias.len();
        // ReLU outputs are >= 0, so starting from 0 equals masking empty windows to 0.
        let mut pooled = vec![0.0f64; nf];
        if ids.len() >= k {
            for t in 0..=ids.len() - k {
                if ids[t..t + k].iter().all(|&id| id == 0) {
                    continue;
                }
                let x: Vec<f64> = (0..k)
                    .flat_map(|r| embedding(&p.emb_msg, ids[t + r]))
                    .collect();
                for j in 0..nf {
                    let mut v = layer.bias[j];
                    for (i, xi) in x.iter().enumerate() {
                        v += xi * layer.weight.get(i, j);
                    }
                    pooled[j] = pooled[j].max(v.max(0.0));
                }
            }
        }
        z.extend(pooled);
    }
    let mut code = if enc.files.is_empty() {
        vec![0.0; 2 * d]
    } else {
        vec![f64::NEG_INFINITY; 2 * d]
    };
    for f in &enc.files {
        let mut fv = side_vector(&f.removed_ids, &p.emb_code);
        fv.extend(side_vector(&f.added_ids, &p.emb_code));
        for c in 0..2 * d {
            code[c] = code[c].max(fv[c]);
        }
    }
    z.extend(code);
    z
}

pub fn forward(enc: &EncodedPatch, p: &ModelParams) -> f64 {
    let z = features(enc, p);
    let h: Vec<f64> = (0..p.hidden_b.len())
        .map(|j| {
            let a = p.hidden_b[j]
                + z.iter()
                    .enumerate()
                    .map(|(i, zi)| zi * p.hidden_w.get(i, j))
                    .sum::<f64>();
            a.max(0.0)
        })
        .collect();
    let logit = p.out_b + h.iter().zip(&p.out_w).map(|(a, b)| a * b).sum::<f64>();
    1.0 / (1.0 + (-logit).exp())
}

fn sum_sq(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

/// Mean clamped binary cross-entropy plus `l2` times the squared weights.
pub fn loss(batch: &[EncodedPatch], p: &ModelParams, l2: f64) -> f64 {
    let mut total = 0.0;
    for enc in batch {
        let s = forward(enc, p).clamp(1e-12, 1.0 - 1e-12);
        let y = f64::from(enc.label.expect("labelled batch"));
        total += -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
    }
    let mut reg = sum_sq(p.emb_msg.data()) + sum_sq(p.emb_code.data()) + sum_sq(&p.out_w);
    for layer in &p.conv {
        reg += sum_sq(layer.weight.data());
    }
    reg += sum_sq(p.hidden_w.data());
    total / batch.len() as f64 + l2 * reg
}

/// Central finite-difference gradient of [`loss`], one entry per parameter
/// group (in serialization order).
pub fn numeric_gradient(
    batch: &[EncodedPatch],
    p: &ModelParams,
    l2: f64,
    eps: f64,
) -> Vec<(String, Vec<f64>)> {
    let mut work = p.clone();
    let names: Vec<(String, usize)> = p
        .groups()
        .iter()
        .map(|g| (g.name.clone(), g.values.len()))
        .collect();
    let mut out = Vec::new();
    for (gi, (name, len)) in names.into_iter().enumerate() {
        let mut grad = Vec::with_capacity(len);
        for i in 0..len {
            let orig = p.groups()[gi].values[i];
            work.groups_mut()[gi].values[i] = orig + eps;
            let up = loss(batch, &work, l2);
            work.groups_mut()[gi].values[i] = orig - eps;
            let down = loss(batch, &work, l2);
            work.groups_mut()[gi].values[i] = orig;
            grad.push((up - down) / (2.0 * eps));
        }
        out.push((name, grad));
    }
    out
}
