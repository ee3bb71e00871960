//! Boxes, overlap, candidate sampling, patch extraction and windows.

mod bbox;
mod patch;
mod sampling;

pub use bbox::{iou, label_by_iou, read_ground_truth, write_ground_truth, BBox, BoxState, Label};
pub use patch::{cosine_window, extract_patch};
pub use sampling::{sample_candidates, sample_training_boxes, SamplerConfig, TrainingDraw};
