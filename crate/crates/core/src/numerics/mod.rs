//! Dense tensors, reverse-mode gradients, Adam, and parameter storage.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use params::{ParamStore, Session};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator threaded through initialization and sampling.
pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}
