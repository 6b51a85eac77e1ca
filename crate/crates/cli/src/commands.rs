use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::info;
use mvre::data::{
    generate_corpus_with_layout, load_jsonl, sample_kshot, save_jsonl, split_dataset, AspectLayout,
    Dataset, Splits,
};
use mvre::experiments::{
    pretrain_base, pretrain_metadata, run_similarity_protocol, sweep_m, train, view_aspect_heatmap,
    write_heatmap_csv, write_sweep_csv, Pretrained, TrainConfig, TrainedModel,
};
use mvre::mvre::{dynamic_init, RelationSchema};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Where a command writes and what it resolved.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn config_json(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Pretty JSON `{"config": .., key: payload}` with a trailing newline.
    fn write_json<T: Serialize>(&self, name: &str, key: &str, payload: &T) -> Result<PathBuf> {
        let doc = json!({ "config": self.config_json(), key: payload });
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }

    fn comments(&self) -> Vec<String> {
        vec![
            "std is the population standard deviation over seeds".to_string(),
            format!(
                "config: {}",
                serde_json::to_string(&self.config_json()).expect("config serializes")
            ),
        ]
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.config.seed,
            ..self.config.train.clone()
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| anyhow!("`paths.{key}` is not set"))
}

fn load_dataset(ctx: &Ctx) -> Result<Dataset> {
    let path = required(&ctx.config.paths.dataset, "dataset")?;
    Ok(load_jsonl(path, ctx.config.data.na_label.as_deref())?)
}

fn load_schema(ctx: &Ctx, ds: &Dataset) -> Result<RelationSchema> {
    let m = ctx.config.train.m;
    let schema = match &ctx.config.paths.schema {
        Some(p) => RelationSchema::load(p)?.with_m(m)?,
        None => RelationSchema::from_dataset(ds, m)?,
    };
    Ok(schema)
}

fn splits(ctx: &Ctx, ds: &Dataset) -> Result<Splits> {
    Ok(split_dataset(
        ds,
        &ctx.config.data.split,
        ctx.config.data.split_seed,
    )?)
}

fn load_base(ctx: &Ctx) -> Result<Pretrained> {
    let path = required(&ctx.config.paths.base_checkpoint, "base_checkpoint")?;
    Pretrained::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_trained(ctx: &Ctx) -> Result<TrainedModel> {
    let path = required(&ctx.config.paths.checkpoint, "checkpoint")?;
    TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn generate_corpus(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let corpus = generate_corpus_with_layout(&ctx.config.corpus, ctx.config.seed)?;
    let schema = RelationSchema::from_dataset(&corpus.dataset, ctx.config.train.m)?;
    let data = ctx.path("dataset.jsonl");
    save_jsonl(&corpus.dataset, &data)?;
    let schema_path = ctx.path("schema.json");
    schema.save(&schema_path)?;
    let layout = ctx.path("layout.json");
    fs::write(
        &layout,
        serde_json::to_string_pretty(&corpus.layout)? + "\n",
    )?;
    info!(
        "{} instances over {} relations",
        corpus.dataset.len(),
        corpus.dataset.relations.len()
    );
    Ok(vec![data, schema_path, layout])
}

pub fn pretrain(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let sp = splits(ctx, &ds)?;
    let mut pcfg = ctx.config.pretrain.clone();
    pcfg.seed = ctx.config.seed;
    let (base, report) = pretrain_base(
        &[&ds],
        &sp.train,
        &sp.dev,
        &ctx.config.model,
        &pcfg,
        &ctx.config.train.template(),
        ctx.config.pretrain_with_suffix,
    )?;
    info!(
        "held-out masked accuracy {:.4} (uniform {:.5})",
        report.heldout_accuracy, report.uniform_baseline
    );
    let mut meta = pretrain_metadata(base.model.config(), &pcfg, &report);
    meta.insert("run_config".into(), ctx.config_json());
    let ckpt = ctx.path("pretrained.ckpt");
    base.save(&ckpt, meta)?;
    let rep = ctx.write_json("pretrain_report.json", "report", &report)?;
    Ok(vec![ckpt, rep])
}

pub fn train_cmd(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let schema = load_schema(ctx, &ds)?;
    let base = load_base(ctx)?;
    let sp = splits(ctx, &ds)?;
    let episode = sample_kshot(&sp, ctx.config.data.k, ctx.config.seed)?;
    let (model, result) = train(&episode, &schema, &ctx.train_config(), &base)?;
    info!("test micro-F1 {:.4}", result.micro_f1);
    println!("micro_f1 {}", result.micro_f1);
    let ckpt = ctx.path("model.ckpt");
    model.save(&ckpt)?;
    let res = ctx.write_json("run_result.json", "result", &result)?;
    Ok(vec![ckpt, res])
}

pub fn eval(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let model = load_trained(ctx)?;
    let path = required(&ctx.config.paths.eval_dataset, "eval_dataset")?;
    let ds = load_jsonl(path, model.schema.na_label.as_deref())?;
    let f1 = model.evaluate(&ds)?;
    println!("micro_f1 {f1}");
    let out = ctx.write_json(
        "eval.json",
        "eval",
        &json!({ "micro_f1": f1, "instances": ds.len() }),
    )?;
    Ok(vec![out])
}

pub fn sweep(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let schema = load_schema(ctx, &ds)?;
    let base = load_base(ctx)?;
    let sp = splits(ctx, &ds)?;
    let e = &ctx.config.experiment;
    let rows = sweep_m(
        &sp,
        &schema,
        ctx.config.data.k,
        &e.seeds,
        &e.m_values,
        &ctx.config.train,
        &base,
    )?;
    for r in &rows {
        info!("m = {}: {:.4} ± {:.4}", r.m, r.mean_f1, r.std_f1);
    }
    let csv = ctx.path("sweep.csv");
    write_sweep_csv(&csv, &rows, &ctx.comments())?;
    let js = ctx.write_json("sweep.json", "rows", &rows)?;
    Ok(vec![csv, js])
}

pub fn sim_protocol(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let schema = load_schema(ctx, &ds)?;
    let base = load_base(ctx)?;
    let sp = splits(ctx, &ds)?;
    let e = &ctx.config.experiment;
    let report = run_similarity_protocol(
        &sp,
        &schema,
        e.sim_k,
        e.sim_m,
        &e.seeds,
        &ctx.config.train,
        &base,
    )?;
    info!(
        "ratios: multi {:.4}, single {:.4}",
        report.ratio_multi, report.ratio_single
    );
    Ok(vec![ctx.write_json(
        "similarity.json",
        "report",
        &report,
    )?])
}

pub fn probe_init(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let base = load_base(ctx)?;
    let schema = match &ctx.config.paths.schema {
        Some(p) => RelationSchema::load(p)?.with_m(ctx.config.train.m)?,
        None => load_schema(ctx, &load_dataset(ctx)?)?,
    };
    let (_, records) = dynamic_init(&schema, &base.vocab, &base.model, ctx.config.train.m)?;
    Ok(vec![ctx.write_json(
        "probe_report.json",
        "records",
        &records,
    )?])
}

pub fn analyze_views(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let model = load_trained(ctx)?;
    let path = required(&ctx.config.paths.layout, "layout")?;
    let layout: AspectLayout = serde_json::from_str(&fs::read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let heat = view_aspect_heatmap(
        &model.model,
        &model.vocab,
        &model.verbalizer,
        &layout.aspect_word_sets(),
        ctx.config.experiment.top_k,
    )?;
    let csv = ctx.path("heatmap.csv");
    write_heatmap_csv(&csv, &heat, &ctx.comments()[1..])?;
    let js = ctx.write_json("heatmap.json", "heatmap", &heat)?;
    Ok(vec![csv, js])
}
