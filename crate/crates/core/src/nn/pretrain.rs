//! Masked-token pretraining for the encoder.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step_store, AdamWConfig, AdamWState};
use super::model::MlmModel;
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub warmup_steps: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1500,
            batch_size: 16,
            mask_prob: 0.15,
            warmup_steps: 100,
            optimizer: AdamWConfig {
                lr: 2e-3,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

/// Token-id sequences for masked-token training.
#[derive(Clone, Debug)]
pub struct MlmCorpus {
    pub train: Vec<Vec<usize>>,
    pub heldout: Vec<Vec<usize>>,
    /// `maskable[id]` is true for ordinary words; specials are never masked.
    pub maskable: Vec<bool>,
    pub mask_id: usize,
}

impl MlmCorpus {
    fn replacement_pool(&self) -> Vec<usize> {
        (0..self.maskable.len())
            .filter(|&i| self.maskable[i])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub heldout_accuracy: f64,
    pub uniform_baseline: f64,
}

struct Masked {
    input: Vec<usize>,
    positions: Vec<usize>,
    targets: Vec<usize>,
}

/// BERT-style corruption: each maskable position is picked with `prob`
/// (at least one per sequence); picked tokens become MASK 80% of the time,
/// a random word 10%, and stay unchanged 10%.
fn corrupt(
    seq: &[usize],
    corpus: &MlmCorpus,
    pool: &[usize],
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Masked> {
    let candidates: Vec<usize> = (0..seq.len())
        .filter(|&i| corpus.maskable.get(seq[i]).copied().unwrap_or(false))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let mut positions: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < prob)
        .collect();
    if positions.is_empty() {
        positions.push(candidates[rng.random_range(0..candidates.len())]);
    }
    let mut input = seq.to_vec();
    let targets = positions.iter().map(|&p| seq[p]).collect();
    for &p in &positions {
        let roll: f64 = rng.random();
        if roll < 0.8 {
            input[p] = corpus.mask_id;
        } else if roll < 0.9 {
            input[p] = pool[rng.random_range(0..pool.len())];
        }
    }
    Some(Masked {
        input,
        positions,
        targets,
    })
}

/// Trains `model` in place for `cfg.steps` steps and reports held-out
/// masked-token accuracy.
pub fn pretrain_mlm(
    model: &mut MlmModel,
    corpus: &MlmCorpus,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if corpus.train.is_empty() {
        return Err(Error::validation(
            "pretrain.corpus",
            "no training sequences",
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("pretrain.batch_size", "must be positive"));
    }
    if corpus.maskable.len() > model.vocab_size() {
        return Err(Error::validation(
            "pretrain.corpus",
            "vocabulary larger than the model's",
        ));
    }
    let pool = corpus.replacement_pool();
    let mut state = AdamWState::new();
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;
    let mut initial_loss = None;
    let mut final_loss = None;

    for step in 0..cfg.steps {
        let mut rng = seeded(cfg.seed, 0x7072_6500 + step as u64);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut seeded(cfg.seed, 0x6570_0000 + epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut tape = Tape::with_precision(model.config().precision);
        let bound = model.bind(&mut tape);
        let mut dropout_rng = seeded(cfg.seed, 0x6472_0000 + step as u64);
        let mut terms = Vec::new();
        for &i in &batch {
            let Some(masked) = corrupt(&corpus.train[i], corpus, &pool, cfg.mask_prob, &mut rng)
            else {
                continue;
            };
            let drop = (model.config().dropout > 0.0).then_some(&mut dropout_rng);
            let len = masked.input.len();
            let hidden = model.encode(&mut tape, &bound, &masked.input, len, drop)?;
            let rows = tape.gather_rows(hidden, &masked.positions)?;
            let logits = model.head_logits(&mut tape, &bound, rows)?;
            let logp = tape.log_softmax_rows(logits);
            for (r, &t) in masked.targets.iter().enumerate() {
                terms.push(tape.pick(logp, r, t)?);
            }
        }
        if terms.is_empty() {
            continue;
        }
        let n = terms.len() as f64;
        let total = tape.add_all(&terms)?;
        let loss = tape.scale(total, -1.0 / n);
        let value = tape.scalar(loss);
        initial_loss.get_or_insert(value);
        final_loss = Some(value);
        let grads = tape.backward(loss)?.for_store(model.params());

        let mut opt = cfg.optimizer.clone();
        if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
            opt.lr *= (step + 1) as f64 / cfg.warmup_steps as f64;
        }
        adamw_step_store(model.params_mut(), &grads, &mut state, &opt)?;
        if !model.params().all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameter after pretraining step {step}"
            )));
        }
        if (step + 1) % 250 == 0 {
            info!("pretrain step {}: loss {value:.4}", step + 1);
        }
    }

    let heldout = if corpus.heldout.is_empty() {
        &corpus.train
    } else {
        &corpus.heldout
    };
    let heldout_accuracy = masked_accuracy(model, corpus, heldout, cfg.seed ^ 0x5eed)?;
    let uniform_baseline = 1.0 / model.vocab_size() as f64;
    info!(
        "pretraining done: held-out masked accuracy {heldout_accuracy:.4} (uniform {uniform_baseline:.5})"
    );
    Ok(PretrainReport {
        steps: cfg.steps,
        initial_loss,
        final_loss,
        heldout_accuracy,
        uniform_baseline,
    })
}

/// Fraction of masked positions whose argmax prediction recovers the
/// original token, under a seeded masking of `sequences`.
pub fn masked_accuracy(
    model: &MlmModel,
    corpus: &MlmCorpus,
    sequences: &[Vec<usize>],
    seed: u64,
) -> Result<f64> {
    let pool = corpus.replacement_pool();
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, seq) in sequences.iter().enumerate() {
        let mut rng = seeded(seed, i as u64);
        let Some(masked) = corrupt(seq, corpus, &pool, 0.15, &mut rng) else {
            continue;
        };
        let (_, logits) = model.forward(&masked.input, masked.input.len())?;
        for (&p, &t) in masked.positions.iter().zip(&masked.targets) {
            let row = logits.row(p);
            let best = argmax_lowest(row);
            hits += usize::from(best == t);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
