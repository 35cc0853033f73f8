//! Dense tensors, the denoiser network, optimizer, gradient checking,
//! checkpoints and the seeded random stream.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod rng;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use network::{Architecture, DenoiserModel, ForwardCache, Gradients, Preconditioning};
pub use rng::Rng;
pub use tensor::Tensor;
