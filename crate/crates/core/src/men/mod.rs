//! Motion estimation network: frozen feature stage, adaptive 1x1 head,
//! score-map labels and back-projection.

mod amen;
mod config;
mod fmen;
mod labels;

pub use amen::{train_amen, train_amen_with, Amen};
pub use config::{FmenPretrainConfig, MenConfig};
pub use fmen::{apply_window, pretrain_fmen, search_patch, search_window, Fmen};
pub use labels::{
    argmax_cell, backproject_argmax, make_score_labels, save_heatmap, score_heatmap,
    write_score_map_csv, ScoreLabels, POSITIVE,
};
