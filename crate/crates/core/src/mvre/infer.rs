use serde::{Deserialize, Serialize};

use super::scores::{
    per_view_label_probs, view_posterior, ViewPosteriorHead, ViewScores, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::nn::{MlmModel, Tape, Tensor};
use crate::vocab::{EncodedPrompt, Verbalizer};

/// How per-view label probabilities are merged into one score per relation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `Σ_j p_j · p(y | x, h_j)`.
    #[default]
    Mixture,
    /// `Σ_j log max(p_j · p(y | x, h_j), ε)`, the negated training loss.
    Product,
}

/// Hidden states and logits at the mask rows only: `([m × d], [m × V])`.
pub fn mask_pass(model: &MlmModel, prompt: &EncodedPrompt) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::with_precision(model.config().precision);
    let bound = model.bind(&mut tape);
    let hidden = model.encode(
        &mut tape,
        &bound,
        prompt.active_ids(),
        prompt.attention_length,
        None,
    )?;
    let rows = tape.gather_rows(hidden, &prompt.mask_positions)?;
    let logits = model.head_logits(&mut tape, &bound, rows)?;
    Ok((tape.value(rows).clone(), tape.value(logits).clone()))
}

pub fn view_scores(
    model: &MlmModel,
    head: &ViewPosteriorHead,
    prompt: &EncodedPrompt,
    verbalizer: &Verbalizer,
) -> Result<ViewScores> {
    let (hidden, logits) = mask_pass(model, prompt)?;
    let hs: Vec<Vec<f64>> = (0..hidden.rows()).map(|r| hidden.row(r).to_vec()).collect();
    let posterior = view_posterior(head, &hs)?;
    let local = EncodedPrompt {
        mask_positions: (0..prompt.m()).collect(),
        ..prompt.clone()
    };
    let per_view_label_prob = per_view_label_probs(&logits, &local, verbalizer)?;
    Ok(ViewScores {
        posterior,
        per_view_label_prob,
    })
}

pub fn aggregate(scores: &ViewScores, mode: ScoreMode) -> Vec<f64> {
    let pv = &scores.per_view_label_prob;
    (0..pv.cols())
        .map(|y| {
            scores
                .posterior
                .iter()
                .enumerate()
                .map(|(j, p)| match mode {
                    ScoreMode::Mixture => p * pv.get(j, y),
                    ScoreMode::Product => (p * pv.get(j, y)).max(DEFAULT_EPSILON).ln(),
                })
                .sum()
        })
        .collect()
}

/// Index of the best score; ties go to the lowest relation index.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Predicted relation index and the score over every relation.
pub fn infer(
    model: &MlmModel,
    head: &ViewPosteriorHead,
    prompt: &EncodedPrompt,
    verbalizer: &Verbalizer,
    mode: ScoreMode,
) -> Result<(usize, Vec<f64>)> {
    if prompt.m() != verbalizer.m() {
        return Err(Error::Shape(format!(
            "prompt has {} masks, verbalizer has {} views",
            prompt.m(),
            verbalizer.m()
        )));
    }
    let scores = view_scores(model, head, prompt, verbalizer)?;
    let agg = aggregate(&scores, mode);
    Ok((argmax_first(&agg), agg))
}
