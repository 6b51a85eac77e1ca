//! Training, evaluation and the analysis protocols.

mod config;
mod metrics;
mod protocols;
mod train;

pub use config::TrainConfig;
pub use metrics::{mean_std, micro_f1, micro_f1_with};
pub use protocols::{
    run_grid, run_similarity_protocol, similarity_ratio, sweep_m, view_aspect_heatmap,
    write_grid_csv, write_heatmap_csv, write_sweep_csv, GridRow, GridRun, GridTable, Heatmap,
    SimilarityReport, SweepRow,
};
pub use train::{
    batch_loss_node, dataset_loss, encode_dataset, prepare, pretrain_base, pretrain_metadata,
    train, train_step, view_head_id, LossWeights, Pretrained, RunResult, TrainedModel,
};
