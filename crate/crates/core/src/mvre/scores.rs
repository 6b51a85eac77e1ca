//! View posterior, per-view label probabilities and the training losses.
//!
//! Every quantity has a plain value form and a tape form; the tape forms
//! are what training differentiates, the value forms are what tests and
//! reports read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine, dot, sigmoid, softmax_into, Tape, Tensor, Var};
use crate::vocab::{EncodedPrompt, Verbalizer};

/// Floor inside the logarithm of the multi-view loss.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// The vector `w` scoring each mask representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPosteriorHead {
    pub w: Vec<f64>,
}

impl ViewPosteriorHead {
    /// All-zero head: uniform posterior.
    pub fn zeros(d: usize) -> Self {
        ViewPosteriorHead { w: vec![0.0; d] }
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::row_vector(self.w.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rows() != 1 {
            return Err(Error::Shape(format!(
                "view head must be 1 × d, got {:?}",
                t.shape()
            )));
        }
        Ok(ViewPosteriorHead {
            w: t.data().to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub posterior: Vec<f64>,
    /// `[m × |Y|]`.
    pub per_view_label_prob: Tensor,
}

/// `p_j = σ(w·h_j) / Σ_k σ(w·h_k)`. A single view gets exactly 1.
pub fn view_posterior(head: &ViewPosteriorHead, hs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if hs.is_empty() {
        return Err(Error::Contract("view posterior over zero views".into()));
    }
    if let Some(h) = hs.iter().find(|h| h.len() != head.w.len()) {
        return Err(Error::Contract(format!(
            "hidden vector of dimension {} for a head of dimension {}",
            h.len(),
            head.w.len()
        )));
    }
    if hs.len() == 1 {
        return Ok(vec![1.0]);
    }
    let s: Vec<f64> = hs.iter().map(|h| sigmoid(dot(&head.w, h))).collect();
    let total: f64 = s.iter().sum();
    Ok(s.iter().map(|v| v / total).collect())
}

/// Full-vocabulary softmax at each mask row of `logits`, read at `v_j(y)`.
pub fn per_view_label_probs(
    logits: &Tensor,
    prompt: &EncodedPrompt,
    verbalizer: &Verbalizer,
) -> Result<Tensor> {
    let m = verbalizer.m();
    if prompt.mask_positions.len() != m {
        return Err(Error::Shape(format!(
            "prompt has {} masks, verbalizer has {m} views",
            prompt.mask_positions.len()
        )));
    }
    let rows: Vec<usize> = prompt.mask_positions.clone();
    if rows.iter().any(|&r| r >= logits.rows()) {
        return Err(Error::Shape("mask position beyond logits rows".into()));
    }
    let mut out = Tensor::zeros(m, verbalizer.n_relations());
    let mut probs = vec![0.0; logits.cols()];
    for (j, &pos) in rows.iter().enumerate() {
        softmax_into(logits.row(pos), &mut probs);
        for (y, id) in verbalizer.view_ids(j + 1).into_iter().enumerate() {
            if id >= probs.len() {
                return Err(Error::Shape(format!("virtual id {id} beyond logits width")));
            }
            out.set(j, y, probs[id]);
        }
    }
    Ok(out)
}

/// `Σ_j −log max(p_j · p_M([MASK]_j = v_j(y)), ε)`.
pub fn mvdl_loss(scores: &ViewScores, y: usize, eps: f64) -> Result<f64> {
    let pv = &scores.per_view_label_prob;
    if y >= pv.cols() || scores.posterior.len() != pv.rows() {
        return Err(Error::Shape(format!(
            "label {y} for scores of shape {:?}",
            pv.shape()
        )));
    }
    Ok(scores
        .posterior
        .iter()
        .enumerate()
        .map(|(j, p)| -(p * pv.get(j, y)).max(eps).ln())
        .sum())
}

fn check_embeddings(emb: &Tensor, n_rel: usize, m: usize) -> Result<()> {
    if emb.rows() != n_rel * m || n_rel == 0 || m == 0 {
        return Err(Error::Shape(format!(
            "{} embedding rows for {n_rel} relations × {m} views",
            emb.rows()
        )));
    }
    if let Some(r) = (0..emb.rows()).find(|&r| emb.row(r).iter().all(|&v| v == 0.0)) {
        return Err(Error::Numeric(format!(
            "virtual embedding row {r} has zero norm"
        )));
    }
    Ok(())
}

fn cos(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine(a, b).ok_or_else(|| Error::Numeric("zero-norm embedding".into()))
}

/// `−1/(|Y|m²) Σ_r Σ_{i,j} cos(e_r^i, e_r^j)` over rows `r·m + (j−1)`.
pub fn local_loss(emb: &Tensor, n_rel: usize, m: usize) -> Result<f64> {
    check_embeddings(emb, n_rel, m)?;
    let mut total = 0.0;
    for r in 0..n_rel {
        for i in 0..m {
            for j in 0..m {
                total += cos(emb.row(r * m + i), emb.row(r * m + j))?;
            }
        }
    }
    Ok(-total / (n_rel * m * m) as f64)
}

/// `1/(|Y|²m) Σ_i Σ_{u,v} cos(e_u^i, e_v^i)`.
pub fn global_loss(emb: &Tensor, n_rel: usize, m: usize) -> Result<f64> {
    check_embeddings(emb, n_rel, m)?;
    let mut total = 0.0;
    for i in 0..m {
        for u in 0..n_rel {
            for v in 0..n_rel {
                total += cos(emb.row(u * m + i), emb.row(v * m + i))?;
            }
        }
    }
    Ok(total / (n_rel * n_rel * m) as f64)
}

pub fn total_loss(mvdl: f64, local: f64, global: f64, alpha: f64, beta: f64) -> f64 {
    mvdl + alpha * local + beta * global
}

/// Tape form of the posterior: `[m × 1]` from hidden rows `[m × d]` and the
/// `[1 × d]` head.
pub fn posterior_node(tape: &mut Tape, w: Var, hidden: Var) -> Result<Var> {
    let m = tape.value(hidden).rows();
    if tape.value(hidden).cols() != tape.value(w).cols() {
        return Err(Error::Contract(
            "hidden width differs from head width".into(),
        ));
    }
    if m == 1 {
        return Ok(tape.constant(Tensor::scalar(1.0)));
    }
    let z = tape.matmul_bt(hidden, w)?;
    let s = tape.sigmoid(z);
    let total = tape.sum(s);
    let inv = tape.recip(total);
    tape.mul_scalar_var(s, inv)
}

/// Tape form of the multi-view loss for one instance. `mask_logits` holds
/// the `m` mask rows; `targets[j]` is `v_{j+1}(y)`.
pub fn mvdl_node(
    tape: &mut Tape,
    posterior: Var,
    mask_logits: Var,
    targets: &[usize],
    eps: f64,
) -> Result<Var> {
    let probs = tape.softmax_rows(mask_logits);
    let mut terms = Vec::with_capacity(targets.len());
    for (j, &t) in targets.iter().enumerate() {
        let p = tape.pick(probs, j, t)?;
        let post = tape.pick(posterior, j, 0)?;
        let q = tape.mul(post, p)?;
        let q = tape.clamp_min(q, eps);
        terms.push(tape.log(q));
    }
    let total = tape.add_all(&terms)?;
    Ok(tape.scale(total, -1.0))
}

fn grouped_weights(n_rel: usize, m: usize, same: impl Fn(usize, usize) -> bool, w: f64) -> Tensor {
    let n = n_rel * m;
    let mut t = Tensor::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if same(a, b) {
                t.set(a, b, w);
            }
        }
    }
    t
}

/// Tape form of the local loss over `[|Y|m × d]` embedding rows.
pub fn local_node(tape: &mut Tape, emb: Var, n_rel: usize, m: usize) -> Result<Var> {
    check_embeddings(tape.value(emb), n_rel, m)?;
    let c = tape.cosine_matrix(emb, emb)?;
    let w = grouped_weights(
        n_rel,
        m,
        |a, b| a / m == b / m,
        -1.0 / (n_rel * m * m) as f64,
    );
    tape.weighted_sum(c, w)
}

/// Tape form of the global loss over `[|Y|m × d]` embedding rows.
pub fn global_node(tape: &mut Tape, emb: Var, n_rel: usize, m: usize) -> Result<Var> {
    check_embeddings(tape.value(emb), n_rel, m)?;
    let c = tape.cosine_matrix(emb, emb)?;
    let w = grouped_weights(
        n_rel,
        m,
        |a, b| a % m == b % m,
        1.0 / (n_rel * n_rel * m) as f64,
    );
    tape.weighted_sum(c, w)
}
