//! Online loop: first-frame initialization, gated buffer and memory
//! maintenance, and short/long-term fine-tuning of the two heads.

mod config;
mod memory;
mod offline;
mod output;
mod run;

pub use config::TrackerConfig;
pub use memory::{gate, FrameCache, FrameEvents, GateDecision, MemoryStore, Scheduler};
pub use offline::{train_models, Trained, FMEN_CHECKPOINT, SIAMESE_CHECKPOINT};
pub use output::{overlay, read_track_boxes, write_track_csv, GT_COLOR, PRED_COLOR, TRACK_HEADER};
pub use run::{run_sequence, FrameOutput, Models, Tracker, Variant};
