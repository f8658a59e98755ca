//! Desk-scale stand-ins for pre-trained CNNs: synthetic oriented-bar
//! images, a small configurable architecture, and an SGD trainer.

mod arch;
mod data;
mod train;

pub use arch::{Architecture, Head};
pub use data::{generate, template, Splits, SyntheticSpec};
pub use train::{cross_entropy, train, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` for `seed`.
pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
