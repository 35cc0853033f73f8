pub mod closedform;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod worlds;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/discrete-optima.md")]
    pub struct DiscreteOptima;
    #[doc = include_str!("../../../book/src/guided-sampling.md")]
    pub struct GuidedSampling;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub struct Metrics;
}
