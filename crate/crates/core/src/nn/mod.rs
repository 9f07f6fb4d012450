//! Minimal differentiable network substrate: dense arrays, linear layers,
//! activations, MLPs with explicit backward passes, AdamW, and finite-difference
//! verification.

mod activation;
mod array;
pub mod checkpoint;
pub mod gradcheck;
mod linear;
mod mlp;
mod optim;

pub use activation::{sigmoid, softmax_row, Activation};
pub use array::DenseArray;
pub(crate) use array::{axpy, dot};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::grad_check;
pub use linear::{LinearGrads, LinearLayer};
pub use mlp::{Mlp, MlpCache};
pub use optim::AdamW;
