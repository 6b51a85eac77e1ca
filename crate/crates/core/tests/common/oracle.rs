//! Mixture scores of `infer` against a straight-line evaluation over every
//! three-word sentence of a tiny vocabulary.

use super::{relations, rng, toy, ToySpec};
use mvre::data::RelationInstance;
use mvre::mvre::{infer, ScoreMode, ViewPosteriorHead};
use mvre::vocab::{wrap_template, EntityOrder, TemplateOptions};
use rand::Rng;

fn oracle_scores(
    logits: &[Vec<f64>],
    hidden: &[Vec<f64>],
    w: &[f64],
    targets: &[Vec<usize>],
) -> Vec<f64> {
    let m = logits.len();
    let sig: Vec<f64> = hidden
        .iter()
        .map(|h| {
            let mut z = 0.0;
            for k in 0..w.len() {
                z += w[k] * h[k];
            }
            1.0 / (1.0 + (-z).exp())
        })
        .collect();
    let total: f64 = sig.iter().sum();
    let post: Vec<f64> = if m == 1 {
        vec![1.0]
    } else {
        sig.iter().map(|s| s / total).collect()
    };
    targets
        .iter()
        .map(|ids| {
            let mut score = 0.0;
            for j in 0..m {
                let row = &logits[j];
                let mut mx = f64::NEG_INFINITY;
                for &v in row {
                    if v > mx {
                        mx = v;
                    }
                }
                let mut z = 0.0;
                for &v in row {
                    z += (v - mx).exp();
                }
                score += post[j] * (row[ids[j]] - mx).exp() / z;
            }
            score
        })
        .collect()
}

pub struct OracleSummary {
    pub checked: usize,
    pub max_abs_err: f64,
    pub argmax_mismatches: usize,
}

/// Base vocabulary of 12 (specials plus three words), m ≤ 2, |Y| ≤ 3, two
/// model seeds, both entity orders.
pub fn exhaustive_mixture_check() -> OracleSummary {
    let mut s = OracleSummary {
        checked: 0,
        max_abs_err: 0.0,
        argmax_mismatches: 0,
    };
    for m in 1..=2 {
        for n_rel in 1..=3 {
            for seed in 0..2u64 {
                let spec = ToySpec {
                    n_plain: 3,
                    n_rel,
                    m,
                    d: 8,
                    heads: 2,
                    layers: 1,
                    max_len: 16,
                    init_std: 0.5,
                };
                let t = toy(&spec, seed);
                assert_eq!(t.vocab.base_size(), 12);
                let mut r = rng(seed + 10 * m as u64 + 100 * n_rel as u64);
                let head = ViewPosteriorHead {
                    w: (0..spec.d).map(|_| r.random_range(-2.0..2.0)).collect(),
                };
                let targets: Vec<Vec<usize>> = (0..n_rel)
                    .map(|y| {
                        (1..=m)
                            .map(|j| t.verbalizer.virtual_id(y, j).unwrap())
                            .collect()
                    })
                    .collect();
                for code in 0..27 {
                    let words: Vec<String> = [code / 9, (code / 3) % 3, code % 3]
                        .iter()
                        .map(|i| format!("w{i}"))
                        .collect();
                    let inst = RelationInstance {
                        tokens: words,
                        subj_span: (0, 0),
                        obj_span: (2, 2),
                        label: relations(1)[0].clone(),
                    };
                    for order in [EntityOrder::SubObj, EntityOrder::ObjSub] {
                        let opts = TemplateOptions {
                            m,
                            max_len: 16,
                            order,
                            markers: true,
                        };
                        let prompt = wrap_template(&inst, &t.vocab, &opts).unwrap();
                        let (hidden, logits) = t
                            .model
                            .forward(prompt.active_ids(), prompt.attention_length)
                            .unwrap();
                        let rows = |x: &mvre::nn::Tensor| -> Vec<Vec<f64>> {
                            prompt
                                .mask_positions
                                .iter()
                                .map(|&p| x.row(p).to_vec())
                                .collect()
                        };
                        let expect =
                            oracle_scores(&rows(&logits), &rows(&hidden), &head.w, &targets);
                        let (pred, got) =
                            infer(&t.model, &head, &prompt, &t.verbalizer, ScoreMode::Mixture)
                                .unwrap();
                        for (a, b) in got.iter().zip(&expect) {
                            s.max_abs_err = s.max_abs_err.max((a - b).abs());
                        }
                        let best =
                            (0..n_rel).fold(0, |b, y| if expect[y] > expect[b] { y } else { b });
                        if pred != best {
                            s.argmax_mismatches += 1;
                        }
                        s.checked += 1;
                    }
                }
            }
        }
    }
    s
}
