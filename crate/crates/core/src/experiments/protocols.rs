//! Multi-run protocols: grids over (k, seed, config), the m sweep, the
//! similarity-ratio study and the view/aspect heatmap.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::mean_std;
use super::train::{train, Pretrained, RunResult};
use crate::data::{sample_kshot, Splits};
use crate::error::{Error, Result};
use crate::mvre::RelationSchema;
use crate::nn::{cosine, MlmModel, Tensor};
use crate::vocab::{Verbalizer, Vocab};

/// One finished run inside a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub k: usize,
    pub seed: u64,
    pub config_index: usize,
    pub micro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub config_index: usize,
    pub m: usize,
    pub runs: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
    pub runs: Vec<GridRun>,
}

impl GridTable {
    /// Groups runs by (k, config) in first-appearance order; `m_of[c]` is the
    /// view count of config `c`.
    pub fn from_runs(runs: Vec<GridRun>, m_of: &[usize]) -> GridTable {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for r in &runs {
            if !keys.contains(&(r.k, r.config_index)) {
                keys.push((r.k, r.config_index));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(k, c)| {
                let f1s: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.k == k && r.config_index == c)
                    .map(|r| r.micro_f1)
                    .collect();
                let (mean_f1, std_f1) = mean_std(&f1s);
                GridRow {
                    k,
                    config_index: c,
                    m: m_of.get(c).copied().unwrap_or(0),
                    runs: f1s.len(),
                    mean_f1,
                    std_f1,
                }
            })
            .collect();
        GridTable { rows, runs }
    }
}

/// Samples one episode per (k, seed) and trains every config on it. Runs are
/// independent and execute on the rayon pool; the table does not depend on
/// scheduling. Each config's seed is replaced by the run seed.
pub fn run_grid(
    splits: &Splits,
    schema: &RelationSchema,
    ks: &[usize],
    seeds: &[u64],
    configs: &[TrainConfig],
    base: &Pretrained,
) -> Result<(GridTable, Vec<RunResult>)> {
    let mut tasks = Vec::new();
    for &k in ks {
        for (c, _) in configs.iter().enumerate() {
            for &seed in seeds {
                tasks.push((k, c, seed));
            }
        }
    }
    let results: Vec<RunResult> = tasks
        .par_iter()
        .map(|&(k, c, seed)| {
            let episode = sample_kshot(splits, k, seed)?;
            let config = TrainConfig {
                seed,
                ..configs[c].clone()
            };
            train(&episode, schema, &config, base).map(|(_, r)| r)
        })
        .collect::<Result<_>>()?;
    let runs = tasks
        .iter()
        .zip(&results)
        .map(|(&(k, c, seed), r)| GridRun {
            k,
            seed,
            config_index: c,
            micro_f1: r.micro_f1,
        })
        .collect();
    let m_of: Vec<usize> = configs.iter().map(|c| c.m).collect();
    Ok((GridTable::from_runs(runs, &m_of), results))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub f1s: Vec<f64>,
}

/// `run_grid` over `m_values` with everything else fixed; rows ascend in m.
pub fn sweep_m(
    splits: &Splits,
    schema: &RelationSchema,
    k: usize,
    seeds: &[u64],
    m_values: &[usize],
    base_config: &TrainConfig,
    base: &Pretrained,
) -> Result<Vec<SweepRow>> {
    let mut ms = m_values.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let configs: Vec<TrainConfig> = ms
        .iter()
        .map(|&m| TrainConfig {
            m,
            ..base_config.clone()
        })
        .collect();
    let (table, _) = run_grid(splits, schema, &[k], seeds, &configs, base)?;
    Ok(table
        .rows
        .iter()
        .map(|row| SweepRow {
            m: row.m,
            mean_f1: row.mean_f1,
            std_f1: row.std_f1,
            f1s: table
                .runs
                .iter()
                .filter(|r| r.config_index == row.config_index)
                .map(|r| r.micro_f1)
                .collect(),
        })
        .collect())
}

pub fn similarity_ratio(f1_low: f64, f1_high: f64) -> Result<f64> {
    if f1_high.is_nan() || f1_high <= 0.0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(f1_low / f1_high)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub k: usize,
    pub m: usize,
    pub seeds: Vec<u64>,
    /// Shots of the reference, multi-mask and single-mask low-shot runs.
    pub shots: [usize; 3],
    pub reference_f1s: Vec<f64>,
    pub multi_f1s: Vec<f64>,
    pub single_f1s: Vec<f64>,
    pub reference_mean: f64,
    pub multi_mean: f64,
    pub single_mean: f64,
    /// m-mask at k/m shots over 1-mask at k shots.
    pub ratio_multi: f64,
    /// 1-mask at k/m shots over 1-mask at k shots.
    pub ratio_single: f64,
}

/// Trains 1-mask at `k` shots, `m`-mask at `k/m` shots and 1-mask at `k/m`
/// shots per seed and compares mean F1s against the first.
pub fn run_similarity_protocol(
    splits: &Splits,
    schema: &RelationSchema,
    k: usize,
    m: usize,
    seeds: &[u64],
    config: &TrainConfig,
    base: &Pretrained,
) -> Result<SimilarityReport> {
    if m == 0 || k == 0 || !k.is_multiple_of(m) {
        return Err(Error::validation(
            "k",
            format!("k = {k} must be a positive multiple of m = {m}"),
        ));
    }
    let low = k / m;
    let single = TrainConfig {
        m: 1,
        ..config.clone()
    };
    let multi = TrainConfig {
        m,
        ..config.clone()
    };
    let reference = run_grid(
        splits,
        schema,
        &[k],
        seeds,
        std::slice::from_ref(&single),
        base,
    )?
    .0;
    let f1s = |t: &GridTable| t.runs.iter().map(|r| r.micro_f1).collect::<Vec<f64>>();
    let reference_f1s = f1s(&reference);
    // With m = 1 all three runs are the same run.
    let (multi_f1s, single_f1s) = if m == 1 {
        (reference_f1s.clone(), reference_f1s.clone())
    } else {
        let (t, _) = run_grid(splits, schema, &[low], seeds, &[multi, single], base)?;
        let pick = |c: usize| {
            t.runs
                .iter()
                .filter(|r| r.config_index == c)
                .map(|r| r.micro_f1)
                .collect()
        };
        (pick(0), pick(1))
    };
    let reference_mean = mean_std(&reference_f1s).0;
    let multi_mean = mean_std(&multi_f1s).0;
    let single_mean = mean_std(&single_f1s).0;
    Ok(SimilarityReport {
        k,
        m,
        seeds: seeds.to_vec(),
        shots: [k, low, low],
        ratio_multi: similarity_ratio(multi_mean, reference_mean)?,
        ratio_single: similarity_ratio(single_mean, reference_mean)?,
        reference_f1s,
        multi_f1s,
        single_f1s,
        reference_mean,
        multi_mean,
        single_mean,
    })
}

/// Relevance of each virtual word to each aspect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// `relation:view`, in verbalizer order.
    pub rows: Vec<String>,
    pub aspects: Vec<String>,
    /// `[rows × aspects]`.
    pub cells: Tensor,
    /// Mean top-k neighbour similarity per row.
    pub s1: Vec<f64>,
}

/// Cell `(v, a)` = `s1(v) · s2(v, a)`: the mean cosine of `v` to its `top_k`
/// most similar plain words times its mean cosine to aspect `a`'s words.
pub fn view_aspect_heatmap(
    model: &MlmModel,
    vocab: &Vocab,
    verbalizer: &Verbalizer,
    aspect_word_sets: &[(String, Vec<String>)],
    top_k: usize,
) -> Result<Heatmap> {
    if top_k == 0 {
        return Err(Error::validation("top_k", "must be positive"));
    }
    let emb = model.token_embed();
    let mut aspect_ids = Vec::with_capacity(aspect_word_sets.len());
    for (name, words) in aspect_word_sets {
        if words.is_empty() {
            return Err(Error::validation(
                "aspects",
                format!("aspect `{name}` has no words"),
            ));
        }
        let ids = words
            .iter()
            .map(|w| {
                vocab
                    .id(w)
                    .filter(|&id| vocab.is_plain(id))
                    .ok_or_else(|| Error::UnknownWord(w.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        aspect_ids.push(ids);
    }
    let plain: Vec<usize> = (0..vocab.base_size())
        .filter(|&id| vocab.is_plain(id))
        .collect();
    let cos = |a: usize, b: usize| cosine(emb.row(a), emb.row(b)).unwrap_or(0.0);
    let ids = verbalizer.ids();
    let mut cells = Tensor::zeros(ids.len(), aspect_ids.len());
    let mut s1s = Vec::with_capacity(ids.len());
    let mut rows = Vec::with_capacity(ids.len());
    for (r, &v) in ids.iter().enumerate() {
        let rel = &verbalizer.relations()[r / verbalizer.m()];
        rows.push(format!("{rel}:{}", r % verbalizer.m() + 1));
        let mut sims: Vec<f64> = plain.iter().map(|&w| cos(v, w)).collect();
        sims.sort_by(|a, b| b.total_cmp(a));
        let top = &sims[..top_k.min(sims.len())];
        let s1 = if top.is_empty() {
            0.0
        } else {
            top.iter().sum::<f64>() / top.len() as f64
        };
        for (a, set) in aspect_ids.iter().enumerate() {
            let s2 = set.iter().map(|&w| cos(v, w)).sum::<f64>() / set.len() as f64;
            cells.set(r, a, s1 * s2);
        }
        s1s.push(s1);
    }
    Ok(Heatmap {
        rows,
        aspects: aspect_word_sets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
        s1: s1s,
    })
}

fn csv_writer(path: &Path, comments: &[String]) -> Result<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path)?;
    for c in comments {
        writeln!(file, "# {c}")?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Grid rows as CSV, preceded by `# ` comment lines.
pub fn write_grid_csv(path: &Path, table: &GridTable, comments: &[String]) -> Result<()> {
    let mut w = csv_writer(path, comments)?;
    w.write_record(["k", "config", "m", "runs", "mean_f1", "std_f1"])
        .map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.k.to_string(),
            r.config_index.to_string(),
            r.m.to_string(),
            r.runs.to_string(),
            r.mean_f1.to_string(),
            r.std_f1.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow], comments: &[String]) -> Result<()> {
    let mut w = csv_writer(path, comments)?;
    w.write_record(["m", "mean_f1", "std_f1", "runs"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.mean_f1.to_string(),
            r.std_f1.to_string(),
            r.f1s.len().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap_csv(path: &Path, h: &Heatmap, comments: &[String]) -> Result<()> {
    let mut w = csv_writer(path, comments)?;
    let mut header = vec!["virtual_word".to_string()];
    header.extend(h.aspects.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (r, name) in h.rows.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(h.cells.row(r).iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
