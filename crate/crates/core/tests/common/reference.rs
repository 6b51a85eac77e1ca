//! Classic single-mask prompt-tuning step, written without any multi-view
//! machinery.

use super::{random_prompt, rng, toy, ToySpec};
use mvre::experiments::{train_step, LossWeights};
use mvre::mvre::{ViewPosteriorHead, DEFAULT_EPSILON};
use mvre::nn::{adamw_step, AdamWConfig, AdamWState, MlmModel, Tape, Tensor};
use mvre::vocab::{EncodedPrompt, Verbalizer};
use rand::Rng;

/// `−log softmax(logits)[v(y)]` at the single mask, averaged over the batch.
pub fn reference_step(
    model: &mut MlmModel,
    verbalizer: &Verbalizer,
    batch: &[(EncodedPrompt, usize)],
    opt: &AdamWConfig,
    state: &mut AdamWState,
) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut terms = Vec::new();
    for (prompt, y) in batch {
        let hidden = model
            .encode(
                &mut tape,
                &bound,
                prompt.active_ids(),
                prompt.attention_length,
                None,
            )
            .unwrap();
        let row = tape.gather_rows(hidden, &prompt.mask_positions).unwrap();
        let logits = model.head_logits(&mut tape, &bound, row).unwrap();
        let probs = tape.softmax_rows(logits);
        let p = tape
            .pick(probs, 0, verbalizer.virtual_id(*y, 1).unwrap())
            .unwrap();
        let lp = tape.log(p);
        terms.push(tape.scale(lp, -1.0));
    }
    let total = tape.add_all(&terms).unwrap();
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    let grads = tape.backward(loss).unwrap().for_store(model.params());
    let mut refs: Vec<&mut Tensor> = model.params_mut().tensors_mut().collect();
    adamw_step(&mut refs, &grads, state, opt).unwrap();
    tape.scalar(loss)
}

/// Two steps of `train_step` with one mask and no Global-Local terms
/// against two reference steps on a random toy. `Err` names the first
/// difference.
pub fn reduction_check(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let spec = ToySpec {
        n_plain: 12,
        n_rel: 3,
        m: 1,
        d: 8,
        heads: 2,
        layers: 2,
        max_len: 14,
        init_std: 0.3,
    };
    let t = toy(&spec, seed);
    let batch: Vec<(EncodedPrompt, usize)> = (0..4)
        .map(|_| {
            let len = r.random_range(4..=14);
            (
                random_prompt(&mut r, &t.vocab, 1, len, 0),
                r.random_range(0..3),
            )
        })
        .collect();
    let opt = AdamWConfig {
        lr: 1e-2,
        ..AdamWConfig::default()
    };
    let weights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        epsilon: DEFAULT_EPSILON,
    };

    let mut ours = t.model.clone();
    let mut head = ViewPosteriorHead::zeros(spec.d);
    let mut state = AdamWState::new();
    let mut reference = t.model.clone();
    let mut ref_state = AdamWState::new();
    for step in 0..2 {
        let a = train_step(
            &mut ours,
            &mut head,
            &t.verbalizer,
            &batch,
            weights,
            &opt,
            &mut state,
            None,
        )
        .unwrap();
        let b = reference_step(&mut reference, &t.verbalizer, &batch, &opt, &mut ref_state);
        if a.to_bits() != b.to_bits() {
            return Err(format!("seed {seed}, step {step}: loss {a} vs {b}"));
        }
    }
    for ((name, x), (_, y)) in ours.params().iter().zip(reference.params().iter()) {
        if !x
            .data()
            .iter()
            .zip(y.data())
            .all(|(p, q)| p.to_bits() == q.to_bits())
        {
            return Err(format!("seed {seed}: parameter {name} differs"));
        }
    }
    if ours == t.model {
        return Err(format!("seed {seed}: the step changed nothing"));
    }
    if head.w.iter().any(|&w| w != 0.0) {
        return Err(format!("seed {seed}: the single-view head moved"));
    }
    Ok(())
}
