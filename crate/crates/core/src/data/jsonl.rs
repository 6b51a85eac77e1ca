//! TACRED-style JSON-lines records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, RelationInstance};
use crate::error::{Error, Result};

/// Field order here is the on-disk key order.
#[derive(Serialize, Deserialize)]
struct Record {
    token: Vec<String>,
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    relation: String,
}

pub fn load_jsonl(path: &Path, na_label: Option<&str>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Load {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let inst = RelationInstance {
            tokens: rec.token,
            subj_span: (rec.subj_start, rec.subj_end),
            obj_span: (rec.obj_start, rec.obj_end),
            label: rec.relation,
        };
        inst.validate().map_err(|e| fail(e.to_string()))?;
        instances.push(inst);
    }
    Dataset::from_instances(instances, na_label.map(str::to_string))
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in &dataset.instances {
        let rec = Record {
            token: inst.tokens.clone(),
            subj_start: inst.subj_span.0,
            subj_end: inst.subj_span.1,
            obj_start: inst.obj_span.0,
            obj_end: inst.obj_span.1,
            relation: inst.label.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
