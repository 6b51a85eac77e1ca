//! Numeric core: tensors, reverse-mode tape, the masked language model,
//! AdamW, checkpoints and pretraining.

mod adamw;
mod checkpoint;
mod model;
mod pretrain;
mod tape;
mod tensor;

pub use adamw::{adamw_step, adamw_step_store, AdamWConfig, AdamWState};
pub use checkpoint::Checkpoint;
pub use model::{Bound, MlmModel, ModelConfig};
pub use pretrain::{
    argmax_lowest, masked_accuracy, pretrain_mlm, MlmCorpus, PretrainConfig, PretrainReport,
};
pub use tape::{sigmoid, softmax_into, Gradients, ParamId, ParamStore, Precision, Tape, Var};
pub use tensor::{cosine, dot, norm, Tensor};

use crate::error::{Error, Result};

/// Final-layer hidden state at the `view`-th mask (1-based).
pub fn mask_hidden(hidden: &Tensor, mask_positions: &[usize], view: usize) -> Result<Vec<f64>> {
    if view == 0 || view > mask_positions.len() {
        return Err(Error::Index {
            index: view,
            len: mask_positions.len(),
        });
    }
    let pos = mask_positions[view - 1];
    if pos >= hidden.rows() {
        return Err(Error::Shape(format!(
            "mask position {pos} beyond {} hidden rows",
            hidden.rows()
        )));
    }
    Ok(hidden.row(pos).to_vec())
}
