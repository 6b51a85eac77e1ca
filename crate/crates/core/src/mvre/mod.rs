//! Multi-view decoupling: view posterior, losses, inference and
//! virtual-word initialization.

mod infer;
mod init;
mod schema;
mod scores;

pub use infer::{aggregate, argmax_first, infer, mask_pass, view_scores, ScoreMode};
pub use init::{
    combined_init, dynamic_init, initialize, static_init, write_virtual_rows, InitMode, ProbeRecord,
};
pub use schema::{default_probe_template, split_label, RelationSchema};
pub use scores::{
    global_loss, global_node, local_loss, local_node, mvdl_loss, mvdl_node, per_view_label_probs,
    posterior_node, total_loss, view_posterior, ViewPosteriorHead, ViewScores, DEFAULT_EPSILON,
};
