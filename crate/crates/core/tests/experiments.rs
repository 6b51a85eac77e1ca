//! Training and protocol runs on an untrained tiny model.

use mvre::data::{
    generate_corpus, sample_kshot, split_dataset, CorpusSpec, SplitFractions, Splits,
};
use mvre::experiments::{
    prepare, run_grid, run_similarity_protocol, sweep_m, train, Pretrained, RunResult, TrainConfig,
    TrainedModel,
};
use mvre::mvre::{InitMode, RelationSchema};
use mvre::nn::{MlmModel, ModelConfig};
use mvre::vocab::Vocab;

struct Setup {
    splits: Splits,
    schema: RelationSchema,
    base: Pretrained,
}

fn setup() -> Setup {
    let spec = CorpusSpec {
        n_relations: 3,
        instances_per_relation: 12,
        aspects_per_relation: 2,
        vocab_pool_size: 6,
        sentence_length_range: (6, 9),
        filler_pool_size: 10,
        entity_pool_size: 10,
        ..CorpusSpec::default()
    };
    let ds = generate_corpus(&spec, 4).unwrap();
    let vocab = Vocab::from_datasets(&[&ds]);
    let config = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        max_len: 40,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    Setup {
        splits: split_dataset(&ds, &SplitFractions::default(), 1).unwrap(),
        schema: RelationSchema::from_dataset(&ds, 1).unwrap(),
        base: Pretrained {
            model: MlmModel::new(config, 2).unwrap(),
            vocab,
        },
    }
}

fn config(m: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        m,
        epochs,
        lr: 1e-2,
        batch_size: 4,
        max_len: 40,
        ..TrainConfig::default()
    }
}

fn without_time(mut r: RunResult) -> RunResult {
    r.wall_time = None;
    r
}

#[test]
fn zero_epochs_keeps_the_prepared_model() {
    let s = setup();
    let ep = sample_kshot(&s.splits, 2, 5).unwrap();
    let cfg = config(2, 0);
    let (tm, result) = train(&ep, &s.schema, &cfg, &s.base).unwrap();
    let (fresh, _) = prepare(&s.schema, &cfg, &s.base).unwrap();
    assert_eq!(tm.model, fresh.model);
    assert_eq!(result.micro_f1, fresh.evaluate(&ep.test).unwrap());
    assert_eq!(result.initial_train_loss, result.final_train_loss);
    assert!(result.per_epoch_losses.is_empty());
}

#[test]
fn training_is_deterministic_and_lowers_the_loss() {
    let s = setup();
    let ep = sample_kshot(&s.splits, 2, 5).unwrap();
    let cfg = config(3, 15);
    let (a, ra) = train(&ep, &s.schema, &cfg, &s.base).unwrap();
    let (b, rb) = train(&ep, &s.schema, &cfg, &s.base).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.head, b.head);
    assert_eq!(without_time(ra.clone()), without_time(rb));
    assert!(ra.final_train_loss < ra.initial_train_loss);
    assert!(ra.per_epoch_losses.iter().all(|l| l.is_finite()));
    assert!(
        a.head.w.iter().any(|&w| w != 0.0),
        "the view head trains when m > 1"
    );
}

#[test]
fn checkpoint_roundtrip_keeps_predictions() {
    let s = setup();
    let ep = sample_kshot(&s.splits, 1, 9).unwrap();
    let (tm, result) = train(&ep, &s.schema, &config(2, 3), &s.base).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    tm.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back.model, tm.model);
    assert_eq!(back.evaluate(&ep.test).unwrap(), result.micro_f1);
}

#[test]
fn singleton_sweep_equals_direct_grid() {
    let s = setup();
    for m in [1, 3] {
        let rows = sweep_m(
            &s.splits,
            &s.schema,
            1,
            &[1, 2],
            &[m],
            &config(1, 2),
            &s.base,
        )
        .unwrap();
        let (table, _) = run_grid(
            &s.splits,
            &s.schema,
            &[1],
            &[1, 2],
            &[config(m, 2)],
            &s.base,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].m, m);
        assert_eq!(
            (rows[0].mean_f1, rows[0].std_f1),
            (table.rows[0].mean_f1, table.rows[0].std_f1)
        );
        let f1s: Vec<f64> = table.runs.iter().map(|r| r.micro_f1).collect();
        assert_eq!(rows[0].f1s, f1s);
    }
}

#[test]
fn sweep_rows_ascend_in_m_and_repeat_exactly() {
    let s = setup();
    let run = || {
        sweep_m(
            &s.splits,
            &s.schema,
            1,
            &[3],
            &[3, 1, 2, 3],
            &config(1, 1),
            &s.base,
        )
        .unwrap()
    };
    let rows = run();
    assert_eq!(rows.iter().map(|r| r.m).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(rows, run());
}

#[test]
fn grid_seeds_override_config_seed() {
    let s = setup();
    let cfg = TrainConfig {
        seed: 77,
        ..config(1, 1)
    };
    let (_, results) = run_grid(&s.splits, &s.schema, &[1], &[4], &[cfg], &s.base).unwrap();
    assert_eq!(results[0].seed, 4);
    assert_eq!(results[0].config.seed, 4);
}

#[test]
fn similarity_protocol_with_one_view_is_exactly_one() {
    let s = setup();
    let r = run_similarity_protocol(&s.splits, &s.schema, 2, 1, &[1, 2], &config(1, 2), &s.base)
        .unwrap();
    assert_eq!((r.ratio_multi, r.ratio_single), (1.0, 1.0));
    assert_eq!(r.shots, [2, 2, 2]);
    assert!(
        run_similarity_protocol(&s.splits, &s.schema, 3, 2, &[1], &config(1, 1), &s.base).is_err()
    );
}

#[test]
fn static_init_needs_no_probe_report() {
    let s = setup();
    let ep = sample_kshot(&s.splits, 1, 1).unwrap();
    let cfg = TrainConfig {
        init_mode: InitMode::Static,
        ..config(2, 1)
    };
    let (_, result) = train(&ep, &s.schema, &cfg, &s.base).unwrap();
    assert!(result.probe_report.is_empty());
    assert_eq!((cfg.resolved_alpha(), cfg.resolved_beta()), (2.0, 0.1));
}
