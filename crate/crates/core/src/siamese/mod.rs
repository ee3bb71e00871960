//! Siamese matching branch and the adaptive template buffer.

mod buffer;
pub(crate) mod net;
mod train;

pub use buffer::{buffered_similarity, match_score, AdaptiveBuffer};
pub use net::{Activations, Embedding, Features, RoiCache, SiameseConfig, SiameseNet, BLOCK_DEPTHS};
pub use train::{build_training_pairs, pair_loss, train_siamese, PairGroup, SiameseTrainConfig, PAIR_NEG_IOU, PAIR_POS_IOU};
