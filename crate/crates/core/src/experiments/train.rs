//! Prompt-tuning runs: vocabulary extension, initialization, mini-batch
//! AdamW on the total loss, evaluation.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::config::TrainConfig;
use super::metrics::micro_f1_with;
use crate::data::{Dataset, Episode};
use crate::error::{Error, Result};
use crate::mvre::{
    global_node, infer, initialize, local_node, mvdl_node, posterior_node, ProbeRecord,
    RelationSchema, ViewPosteriorHead,
};
use crate::nn::{
    adamw_step, pretrain_mlm, AdamWConfig, AdamWState, Bound, Checkpoint, MlmModel, ModelConfig,
    ParamId, PretrainConfig, PretrainReport, Tape, Tensor, Var,
};
use crate::rng::seeded;
use crate::vocab::{
    mlm_corpus, wrap_template, EncodedPrompt, TemplateOptions, Verbalizer, Vocab, VocabFile,
};

const VIEW_HEAD: &str = "view_head.w";

/// A masked language model over a base vocabulary (no virtual words).
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub model: MlmModel,
    pub vocab: Vocab,
}

impl Pretrained {
    pub fn save(&self, path: &Path, metadata: Map<String, Value>) -> Result<()> {
        let mut meta = metadata;
        meta.insert(
            "vocab".into(),
            serde_json::to_value(VocabFile::new(&self.vocab, None))?,
        );
        Checkpoint::from_model(&self.model, meta, Vec::new())?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, header, _) = Checkpoint::read(path)?.into_model()?;
        let file: VocabFile = serde_json::from_value(
            header
                .get("vocab")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("header has no `vocab` entry".into()))?,
        )?;
        let (vocab, _) = file.into_parts()?;
        let vocab = if vocab.len() > vocab.base_size() {
            Vocab::from_words(
                vocab.words()[..vocab.base_size()].to_vec(),
                vocab.base_size(),
            )?
        } else {
            vocab
        };
        if model.vocab_size() < vocab.base_size() {
            return Err(Error::Checkpoint(
                "model vocabulary smaller than its word list".into(),
            ));
        }
        Ok(Pretrained { model, vocab })
    }
}

/// Builds the base vocabulary from `vocab_sources`, then runs masked-token
/// pretraining on `train` (held-out accuracy on `heldout`). With
/// `with_suffix`, each sentence is followed by the template suffix filled
/// with the words found between its entities.
pub fn pretrain_base(
    vocab_sources: &[&Dataset],
    train: &Dataset,
    heldout: &Dataset,
    model_config: &ModelConfig,
    pretrain: &PretrainConfig,
    template: &TemplateOptions,
    with_suffix: bool,
) -> Result<(Pretrained, PretrainReport)> {
    let vocab = Vocab::from_datasets(vocab_sources);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..model_config.clone()
    };
    let mut model = MlmModel::new(config, pretrain.seed)?;
    let corpus = mlm_corpus(train, heldout, &vocab, template, with_suffix)?;
    let report = pretrain_mlm(&mut model, &corpus, pretrain)?;
    Ok((Pretrained { model, vocab }, report))
}

/// A prompt-tuned model with everything needed to score new instances.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: MlmModel,
    pub head: ViewPosteriorHead,
    pub vocab: Vocab,
    pub verbalizer: Verbalizer,
    pub schema: RelationSchema,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = Map::new();
        meta.insert(
            "vocab".into(),
            serde_json::to_value(VocabFile::new(&self.vocab, Some(&self.verbalizer)))?,
        );
        meta.insert("schema".into(), serde_json::to_value(&self.schema)?);
        meta.insert("train_config".into(), serde_json::to_value(&self.config)?);
        Checkpoint::from_model(
            &self.model,
            meta,
            vec![(VIEW_HEAD.into(), self.head.as_tensor())],
        )?
        .write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, header, extras) = Checkpoint::read(path)?.into_model()?;
        let field = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header has no `{k}` entry")))
        };
        let (vocab, verbalizer) =
            serde_json::from_value::<VocabFile>(field("vocab")?)?.into_parts()?;
        let verbalizer = verbalizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no virtual words".into()))?;
        let schema: RelationSchema = serde_json::from_value(field("schema")?)?;
        let config: TrainConfig = serde_json::from_value(field("train_config")?)?;
        let head = extras
            .iter()
            .find(|(n, _)| n == VIEW_HEAD)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{VIEW_HEAD}`")))?;
        let head = ViewPosteriorHead::from_tensor(&head.1)?;
        if head.w.len() != model.d_model() || vocab.len() != model.vocab_size() {
            return Err(Error::Checkpoint(
                "view head or vocabulary does not match the model".into(),
            ));
        }
        Ok(TrainedModel {
            model,
            head,
            vocab,
            verbalizer,
            schema,
            config,
        })
    }

    pub fn encode(&self, inst: &crate::data::RelationInstance) -> Result<EncodedPrompt> {
        wrap_template(inst, &self.vocab, &self.config.template())
    }

    /// Predicted relation index for every instance.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<usize>> {
        ds.instances
            .par_iter()
            .map(|inst| {
                let prompt = self.encode(inst)?;
                infer(
                    &self.model,
                    &self.head,
                    &prompt,
                    &self.verbalizer,
                    self.config.score_mode,
                )
                .map(|r| r.0)
            })
            .collect()
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<f64> {
        let preds = self.predict(ds)?;
        let names: Vec<&str> = preds
            .iter()
            .map(|&p| self.schema.relations[p].as_str())
            .collect();
        let golds: Vec<&str> = ds.instances.iter().map(|i| i.label.as_str()).collect();
        micro_f1_with(
            &names,
            &golds,
            self.schema.na_label.as_deref(),
            self.config.na_inclusive_f1,
        )
    }
}

/// Per-run record. `wall_time` is kept out of the serialized form so result
/// files stay byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub micro_f1: f64,
    pub per_epoch_losses: Vec<f64>,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub dev_f1: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub seed: u64,
    pub k: usize,
    pub config: TrainConfig,
    pub probe_report: Vec<ProbeRecord>,
    #[serde(skip)]
    pub wall_time: Option<f64>,
}

/// Weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl LossWeights {
    pub fn from_config(c: &TrainConfig) -> Self {
        LossWeights {
            alpha: c.resolved_alpha(),
            beta: c.resolved_beta(),
            epsilon: c.epsilon,
        }
    }
}

/// Records the mean multi-view loss over `batch` plus the weighted
/// Global-Local terms. Zero-weight terms are not built at all.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss_node(
    tape: &mut Tape,
    model: &MlmModel,
    bound: &Bound,
    head: Var,
    verbalizer: &Verbalizer,
    batch: &[(EncodedPrompt, usize)],
    weights: LossWeights,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let m = verbalizer.m();
    let mut terms = Vec::with_capacity(batch.len());
    for (prompt, y) in batch {
        if prompt.m() != m {
            return Err(Error::Shape(format!(
                "prompt with {} masks for {m} views",
                prompt.m()
            )));
        }
        let hidden = model.encode(
            tape,
            bound,
            prompt.active_ids(),
            prompt.attention_length,
            dropout.as_deref_mut(),
        )?;
        let rows = tape.gather_rows(hidden, &prompt.mask_positions)?;
        let logits = model.head_logits(tape, bound, rows)?;
        let post = posterior_node(tape, head, rows)?;
        let targets = (1..=m)
            .map(|j| verbalizer.virtual_id(*y, j))
            .collect::<Result<Vec<_>>>()?;
        terms.push(mvdl_node(tape, post, logits, &targets, weights.epsilon)?);
    }
    let total = tape.add_all(&terms)?;
    let mut loss = tape.scale(total, 1.0 / batch.len() as f64);
    if weights.alpha != 0.0 || weights.beta != 0.0 {
        let emb = tape.gather_rows(bound.var(model.token_embed_id()), verbalizer.ids())?;
        let n_rel = verbalizer.n_relations();
        if weights.alpha != 0.0 {
            let l = local_node(tape, emb, n_rel, m)?;
            let l = tape.scale(l, weights.alpha);
            loss = tape.add(loss, l)?;
        }
        if weights.beta != 0.0 {
            let g = global_node(tape, emb, n_rel, m)?;
            let g = tape.scale(g, weights.beta);
            loss = tape.add(loss, g)?;
        }
    }
    Ok(loss)
}

/// Id under which the view head is registered on training tapes: one past
/// the model's own parameters.
pub fn view_head_id(model: &MlmModel) -> ParamId {
    ParamId(model.params().len())
}

/// One AdamW update of the model and the view head on `batch`. Returns the
/// batch loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut MlmModel,
    head: &mut ViewPosteriorHead,
    verbalizer: &Verbalizer,
    batch: &[(EncodedPrompt, usize)],
    weights: LossWeights,
    optimizer: &AdamWConfig,
    state: &mut AdamWState,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let mut tape = Tape::with_precision(model.config().precision);
    let bound = model.bind(&mut tape);
    let head_id = view_head_id(model);
    let w = tape.extra_param(head.as_tensor(), head_id);
    let loss = batch_loss_node(
        &mut tape, model, &bound, w, verbalizer, batch, weights, dropout,
    )?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let mut all = grads.for_store(model.params());
    all.push(
        grads
            .get(head_id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(1, head.w.len())),
    );
    let mut head_t = head.as_tensor();
    {
        let mut refs: Vec<&mut Tensor> = model.params_mut().tensors_mut().collect();
        refs.push(&mut head_t);
        adamw_step(&mut refs, &all, state, optimizer)?;
    }
    head.w = head_t.into_data();
    if !model.params().all_finite() || head.w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite parameter after step {}",
            state.step
        )));
    }
    Ok(value)
}

/// Total loss averaged over `examples`, without updating anything.
pub fn dataset_loss(
    model: &MlmModel,
    head: &ViewPosteriorHead,
    verbalizer: &Verbalizer,
    examples: &[(EncodedPrompt, usize)],
    weights: LossWeights,
) -> Result<f64> {
    let mut tape = Tape::with_precision(model.config().precision);
    let bound = model.bind(&mut tape);
    let w = tape.constant(head.as_tensor());
    let loss = batch_loss_node(
        &mut tape, model, &bound, w, verbalizer, examples, weights, None,
    )?;
    Ok(tape.scalar(loss))
}

/// Encodes `ds` against the schema's relation order.
pub fn encode_dataset(
    ds: &Dataset,
    vocab: &Vocab,
    schema: &RelationSchema,
    template: &TemplateOptions,
) -> Result<Vec<(EncodedPrompt, usize)>> {
    ds.instances
        .iter()
        .map(|inst| {
            let y = schema
                .relations
                .iter()
                .position(|r| r == &inst.label)
                .ok_or_else(|| {
                    Error::validation("label", format!("`{}` is not in the schema", inst.label))
                })?;
            Ok((wrap_template(inst, vocab, template)?, y))
        })
        .collect()
}

/// Extends `base` with the schema's virtual words and initializes them.
pub fn prepare(
    schema: &RelationSchema,
    config: &TrainConfig,
    base: &Pretrained,
) -> Result<(TrainedModel, Vec<ProbeRecord>)> {
    config.validate()?;
    let schema = schema.with_m(config.m)?;
    if config.max_len > base.model.config().max_len {
        return Err(Error::validation(
            "max_len",
            format!(
                "{} exceeds the model's {}",
                config.max_len,
                base.model.config().max_len
            ),
        ));
    }
    let (vocab, verbalizer) = base.vocab.with_virtual(&schema.relations, config.m)?;
    let mut model = base.model.clone();
    if model.vocab_size() != base.vocab.base_size() {
        return Err(Error::validation(
            "model",
            "base model already has virtual words",
        ));
    }
    model.extend_vocab(verbalizer.ids().len(), config.seed);
    let report = initialize(&mut model, &schema, &vocab, &verbalizer, config.init_mode)?;
    let head = ViewPosteriorHead::zeros(model.d_model());
    Ok((
        TrainedModel {
            model,
            head,
            vocab,
            verbalizer,
            schema,
            config: config.clone(),
        },
        report,
    ))
}

/// Full run on one episode. Deterministic in `(episode, schema, config, base)`.
pub fn train(
    episode: &Episode,
    schema: &RelationSchema,
    config: &TrainConfig,
    base: &Pretrained,
) -> Result<(TrainedModel, RunResult)> {
    let started = std::time::Instant::now();
    if episode.train.is_empty() {
        return Err(Error::validation("episode.train", "no training instances"));
    }
    let (mut tm, probe_report) = prepare(schema, config, base)?;
    let template = config.template();
    let examples = encode_dataset(&episode.train, &tm.vocab, &tm.schema, &template)?;
    let weights = LossWeights::from_config(config);
    let optimizer = config.optimizer();
    let initial_train_loss = dataset_loss(&tm.model, &tm.head, &tm.verbalizer, &examples, weights)?;

    let mut state = AdamWState::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut per_epoch_losses = Vec::with_capacity(config.epochs);
    let select = config.best_dev_selection && !episode.dev.is_empty();
    let mut best: Option<(f64, usize, MlmModel, ViewPosteriorHead)> = None;
    let use_dropout = tm.model.config().dropout > 0.0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut seeded(config.seed, 0x6570_6f63_0000 + epoch as u64));
        let mut dropout_rng = seeded(config.seed, 0x6472_6f70_0000 + epoch as u64);
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(EncodedPrompt, usize)> =
                chunk.iter().map(|&i| examples[i].clone()).collect();
            let drop = use_dropout.then_some(&mut dropout_rng);
            let loss = train_step(
                &mut tm.model,
                &mut tm.head,
                &tm.verbalizer,
                &batch,
                weights,
                &optimizer,
                &mut state,
                drop,
            )?;
            sum += loss;
            n += 1;
        }
        let mean = sum / n as f64;
        debug!("epoch {}: loss {mean:.5}", epoch + 1);
        per_epoch_losses.push(mean);
        if select {
            let f1 = tm.evaluate(&episode.dev)?;
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                best = Some((f1, epoch + 1, tm.model.clone(), tm.head.clone()));
            }
        }
    }
    let (dev_f1, selected_epoch) = match best {
        Some((f1, epoch, model, head)) => {
            tm.model = model;
            tm.head = head;
            (Some(f1), Some(epoch))
        }
        None => (None, None),
    };
    let final_train_loss = dataset_loss(&tm.model, &tm.head, &tm.verbalizer, &examples, weights)?;
    let micro_f1 = tm.evaluate(&episode.test)?;
    let wall = started.elapsed().as_secs_f64();
    info!(
        "k={} seed={} m={}: train loss {initial_train_loss:.4} -> {final_train_loss:.4}, test micro-F1 {micro_f1:.4}",
        episode.k, config.seed, config.m
    );
    let result = RunResult {
        micro_f1,
        per_epoch_losses,
        initial_train_loss,
        final_train_loss,
        dev_f1,
        selected_epoch,
        seed: config.seed,
        k: episode.k,
        config: config.clone(),
        probe_report,
        wall_time: Some(wall),
    };
    Ok((tm, result))
}

/// Serializable summary of a pretraining run.
pub fn pretrain_metadata(
    model_config: &ModelConfig,
    pretrain: &PretrainConfig,
    report: &PretrainReport,
) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(
        "pretrain".into(),
        json!({ "model_config": model_config, "config": pretrain, "report": report }),
    );
    m
}
