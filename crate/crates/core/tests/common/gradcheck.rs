//! Analytic gradients against central finite differences.

use super::{random_prompt, random_tensor, rng, toy, Toy, ToySpec};
use mvre::experiments::{batch_loss_node, dataset_loss, view_head_id, LossWeights};
use mvre::mvre::{global_loss, global_node, local_loss, local_node, ViewPosteriorHead};
use mvre::nn::{ParamId, Tape, Tensor};
use mvre::vocab::EncodedPrompt;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor. Some gradients are exactly zero (the attention key
/// bias cancels in the softmax) while the difference quotient there is pure
/// rounding, about `1e-16·|L| / H` ≈ 1e-10; the floor keeps that from
/// reading as a relative error.
pub const FLOOR: f64 = 1e-5;
pub const CONFIGS: u64 = 20;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

struct Case {
    toy: Toy,
    head: ViewPosteriorHead,
    batch: Vec<(EncodedPrompt, usize)>,
}

fn random_case(seed: u64) -> Case {
    let mut r = rng(seed);
    let (d, heads) = [(4, 1), (4, 2), (8, 2), (12, 3), (16, 4), (16, 2)][r.random_range(0..6)];
    let m = r.random_range(1..=4);
    let n_rel = r.random_range(1..=4);
    let n_plain = r.random_range(3..=(40 - 9 - n_rel * m));
    let spec = ToySpec {
        n_plain,
        n_rel,
        m,
        d,
        heads,
        layers: r.random_range(1..=2),
        max_len: 12,
        init_std: 0.4,
    };
    let toy = toy(&spec, seed);
    let head = ViewPosteriorHead {
        w: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
    };
    let batch = (0..r.random_range(1..=3))
        .map(|_| {
            let len = r.random_range(m + 2..=12);
            let pad = r.random_range(0..=1);
            (
                random_prompt(&mut r, &toy.vocab, m, len, pad),
                r.random_range(0..n_rel),
            )
        })
        .collect();
    Case { toy, head, batch }
}

/// Analytic gradients for the model parameters followed by the view head.
fn analytic(case: &Case, weights: LossWeights) -> Vec<Tensor> {
    let model = &case.toy.model;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let head_id = view_head_id(model);
    let w = tape.extra_param(case.head.as_tensor(), head_id);
    let loss = batch_loss_node(
        &mut tape,
        model,
        &bound,
        w,
        &case.toy.verbalizer,
        &case.batch,
        weights,
        None,
    )
    .unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut all = grads.for_store(model.params());
    all.push(
        grads
            .get(head_id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(1, case.head.w.len())),
    );
    all
}

fn loss_at(case: &Case, weights: LossWeights) -> f64 {
    dataset_loss(
        &case.toy.model,
        &case.head,
        &case.toy.verbalizer,
        &case.batch,
        weights,
    )
    .unwrap()
}

/// Entries to probe in a tensor of `n` values: all of small tensors,
/// a seeded sample of large ones.
fn probe_indices(r: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    if n <= 24 {
        (0..n).collect()
    } else {
        index::sample(r, n, 24).into_vec()
    }
}

fn perturbed(case: &mut Case, which: usize, i: usize, delta: f64, weights: LossWeights) -> f64 {
    let n_params = case.toy.model.params().len();
    let set = |case: &mut Case, d: f64| {
        if which == n_params {
            case.head.w[i] += d;
        } else {
            case.toy
                .model
                .params_mut()
                .get_mut(ParamId(which))
                .data_mut()[i] += d;
        }
    };
    let orig = if which == n_params {
        case.head.w[i]
    } else {
        case.toy.model.params().get(ParamId(which)).data()[i]
    };
    set(case, delta);
    let v = loss_at(case, weights);
    // Restore exactly rather than subtracting.
    if which == n_params {
        case.head.w[i] = orig;
    } else {
        case.toy
            .model
            .params_mut()
            .get_mut(ParamId(which))
            .data_mut()[i] = orig;
    }
    v
}

/// Max relative error over probed entries of every parameter, always
/// including all virtual-word embedding rows.
pub fn check_model_loss(seed: u64, weights: LossWeights) -> f64 {
    let mut case = random_case(seed);
    let grads = analytic(&case, weights);
    let mut r = rng(seed ^ 0x5eed);
    let embed = case.toy.model.token_embed_id().0;
    let d = case.toy.model.d_model();
    let mut worst = 0.0f64;
    for (which, g) in grads.iter().enumerate() {
        let mut idx = probe_indices(&mut r, g.len());
        if which == embed {
            for &id in case.toy.verbalizer.ids() {
                idx.extend(id * d..(id + 1) * d);
            }
        }
        for i in idx {
            let plus = perturbed(&mut case, which, i, H, weights);
            let minus = perturbed(&mut case, which, i, -H, weights);
            let numeric = (plus - minus) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

pub fn check_gl(seed: u64, local: bool) -> f64 {
    let mut r = rng(seed ^ 0x61);
    let n_rel = r.random_range(1..=4);
    let m = r.random_range(1..=4);
    let d = r.random_range(2..=16);
    let emb = random_tensor(&mut r, n_rel * m, d, 1.0);
    let value = |e: &Tensor| {
        if local {
            local_loss(e, n_rel, m).unwrap()
        } else {
            global_loss(e, n_rel, m).unwrap()
        }
    };
    let mut tape = Tape::new();
    let e = tape.extra_param(emb.clone(), ParamId(0));
    let l = if local {
        local_node(&mut tape, e, n_rel, m)
    } else {
        global_node(&mut tape, e, n_rel, m)
    }
    .unwrap();
    let grads = tape.backward(l).unwrap();
    let g = grads.get(ParamId(0)).unwrap();
    let mut worst = 0.0f64;
    for i in 0..emb.len() {
        let mut p = emb.clone();
        p.data_mut()[i] += H;
        let mut q = emb.clone();
        q.data_mut()[i] -= H;
        let numeric = (value(&p) - value(&q)) / (2.0 * H);
        worst = worst.max(rel_err(g.data()[i], numeric));
    }
    worst
}
