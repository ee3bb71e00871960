//! Synthetic sequences: textured targets over textured backgrounds.

mod generate;
mod io;
mod spec;
mod suites;

pub use generate::{generate_sequence, Sequence};
pub use io::{frame_file, read_sequence, rgb_to_tensor, tensor_to_rgb, write_sequence, GT_FILE};
pub use spec::{Jump, MotionProfile, Occlusion, SequenceSpec};
pub use suites::Suite;
