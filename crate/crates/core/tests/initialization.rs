mod common;

use common::init::{dynamic_init_check, schema_for};
use common::{toy, ToySpec};
use mvre::mvre::{combined_init, dynamic_init, static_init};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Even when specials and virtual words dominate the logits, the chosen
    /// tokens are always plain words.
    #[test]
    fn dynamic_init_picks_plain_words_only(
        seed in 0u64..1_000_000,
        n_rel in 1usize..=4,
        m in 1usize..=4,
        boost in 0.0f64..3.0,
        init_std in 0.05f64..1.0,
    ) {
        let res = dynamic_init_check(seed, n_rel, m, boost, init_std);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn combined_is_half_static_half_dynamic(seed in 0u64..1_000_000, m in 1usize..=3) {
        let spec = ToySpec { n_plain: 8, n_rel: 2, m, d: 4, heads: 1, layers: 1, max_len: 24, init_std: 0.5 };
        let t = toy(&spec, seed);
        let schema = schema_for(2, m);
        let si = static_init(&schema, &t.vocab, &t.model, m).unwrap();
        let (di, _) = dynamic_init(&schema, &t.vocab, &t.model, m).unwrap();
        let (c, _) = combined_init(&schema, &t.vocab, &t.model, m).unwrap();
        for i in 0..c.len() {
            prop_assert_eq!(c.data()[i], 0.5 * si.data()[i] + 0.5 * di.data()[i]);
        }
    }
}

#[test]
fn single_label_word_is_copied_verbatim() {
    let spec = ToySpec {
        n_plain: 4,
        n_rel: 1,
        m: 3,
        d: 4,
        heads: 1,
        layers: 1,
        max_len: 16,
        init_std: 0.5,
    };
    let t = toy(&spec, 5);
    let mut schema = schema_for(1, 3);
    schema.si_tokens.insert("rel0".into(), vec!["w2".into()]);
    let rows = static_init(&schema, &t.vocab, &t.model, 3).unwrap();
    let w2 = t.model.token_embed().row(t.vocab.id("w2").unwrap());
    for j in 0..3 {
        assert_eq!(rows.row(j), w2);
    }
}

#[test]
fn equal_static_and_dynamic_rows_are_unchanged() {
    let spec = ToySpec {
        n_plain: 4,
        n_rel: 1,
        m: 1,
        d: 4,
        heads: 1,
        layers: 1,
        max_len: 16,
        init_std: 0.5,
    };
    let t = toy(&spec, 9);
    let mut schema = schema_for(1, 1);
    let (di, report) = dynamic_init(&schema, &t.vocab, &t.model, 1).unwrap();
    schema
        .si_tokens
        .insert("rel0".into(), vec![report[0].token.clone()]);
    let (c, _) = combined_init(&schema, &t.vocab, &t.model, 1).unwrap();
    assert_eq!(c, di);
}
