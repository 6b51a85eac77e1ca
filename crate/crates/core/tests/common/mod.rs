#![allow(dead_code)]

pub mod gl;
pub mod gradcheck;
pub mod init;
pub mod oracle;
pub mod reference;

use mvre::nn::{MlmModel, ModelConfig, Tensor};
use mvre::rng::seeded;
use mvre::vocab::{EncodedPrompt, Verbalizer, Vocab, MASK, SPECIAL_WORDS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Specials, `n_plain` words `w0..`, then `n_rel × m` virtual words.
pub struct Toy {
    pub vocab: Vocab,
    pub verbalizer: Verbalizer,
    pub model: MlmModel,
}

pub fn relations(n: usize) -> Vec<String> {
    (0..n).map(|r| format!("rel{r}")).collect()
}

pub fn base_vocab(n_plain: usize) -> Vocab {
    let mut words: Vec<String> = SPECIAL_WORDS.iter().map(|s| s.to_string()).collect();
    words.extend((0..n_plain).map(|i| format!("w{i}")));
    let n = words.len();
    Vocab::from_words(words, n).unwrap()
}

pub struct ToySpec {
    pub n_plain: usize,
    pub n_rel: usize,
    pub m: usize,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub init_std: f64,
}

pub fn toy(spec: &ToySpec, seed: u64) -> Toy {
    let (vocab, verbalizer) = base_vocab(spec.n_plain)
        .with_virtual(&relations(spec.n_rel), spec.m)
        .unwrap();
    let config = ModelConfig {
        d_model: spec.d,
        n_layers: spec.layers,
        n_heads: spec.heads,
        max_len: spec.max_len,
        vocab_size: vocab.len(),
        init_std: spec.init_std,
        ..ModelConfig::default()
    };
    let model = MlmModel::new(config, seed).unwrap();
    Toy {
        vocab,
        verbalizer,
        model,
    }
}

/// `len` random plain ids with `m` consecutive masks at a random offset;
/// the last `pad` positions are PAD and excluded from attention.
pub fn random_prompt(
    rng: &mut ChaCha8Rng,
    vocab: &Vocab,
    m: usize,
    len: usize,
    pad: usize,
) -> EncodedPrompt {
    assert!(len > m + pad);
    let active = len - pad;
    let plain: Vec<usize> = (0..vocab.base_size())
        .filter(|&i| vocab.is_plain(i))
        .collect();
    let mut ids: Vec<usize> = (0..len)
        .map(|_| plain[rng.random_range(0..plain.len())])
        .collect();
    let start = rng.random_range(0..=active - m);
    for id in &mut ids[start..start + m] {
        *id = MASK;
    }
    for id in &mut ids[active..] {
        *id = mvre::vocab::PAD;
    }
    EncodedPrompt {
        ids,
        mask_positions: (start..start + m).collect(),
        subj_positions: Vec::new(),
        obj_positions: Vec::new(),
        attention_length: active,
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded(seed, 0x7465_7374)
}
