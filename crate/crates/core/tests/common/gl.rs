//! Gradient steps on the Global-Local loss alone.

use super::{random_tensor, rng};
use mvre::mvre::{global_node, local_node};
use mvre::nn::{adamw_step, cosine, AdamWConfig, AdamWState, ParamId, Tape, Tensor};

pub const N_REL: usize = 4;
pub const M: usize = 4;
pub const D: usize = 16;
pub const ALPHA: f64 = 2.0;
pub const BETA: f64 = 0.1;
pub const STEPS: usize = 100;

/// Mean cosine over row pairs `a ≠ b` of the same relation, and over pairs of
/// different relations.
pub fn mean_cosines(e: &Tensor) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for a in 0..N_REL * M {
        for b in 0..N_REL * M {
            if a == b {
                continue;
            }
            let c = cosine(e.row(a), e.row(b)).unwrap();
            if a / M == b / M {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

fn gl_step(e: &mut Tensor, state: &mut AdamWState, opt: &AdamWConfig) -> f64 {
    let mut tape = Tape::new();
    let v = tape.extra_param(e.clone(), ParamId(0));
    let l = local_node(&mut tape, v, N_REL, M).unwrap();
    let g = global_node(&mut tape, v, N_REL, M).unwrap();
    let l = tape.scale(l, ALPHA);
    let g = tape.scale(g, BETA);
    let loss = tape.add(l, g).unwrap();
    let grad = tape
        .backward(loss)
        .unwrap()
        .get(ParamId(0))
        .unwrap()
        .clone();
    adamw_step(&mut [e], &[grad], state, opt).unwrap();
    tape.scalar(loss)
}

#[derive(Debug)]
pub struct GlRun {
    pub intra: (f64, f64),
    pub inter: (f64, f64),
    pub loss: (f64, f64),
}

impl GlRun {
    pub fn moved_as_expected(&self) -> bool {
        self.intra.1 > self.intra.0 && self.inter.1 < self.inter.0 && self.loss.1 < self.loss.0
    }
}

/// `STEPS` Adam steps from random unit-scale embeddings.
pub fn gl_run(seed: u64) -> GlRun {
    let opt = AdamWConfig {
        // Large enough that 100 steps get past the phase where the much
        // heavier local term is still merging views.
        lr: 0.1,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut e = random_tensor(&mut rng(seed), N_REL * M, D, 1.0);
    let (intra0, inter0) = mean_cosines(&e);
    let mut state = AdamWState::new();
    let first = gl_step(&mut e, &mut state, &opt);
    let mut last = first;
    for _ in 1..STEPS {
        last = gl_step(&mut e, &mut state, &opt);
    }
    let (intra1, inter1) = mean_cosines(&e);
    GlRun {
        intra: (intra0, intra1),
        inter: (inter0, inter1),
        loss: (first, last),
    }
}
