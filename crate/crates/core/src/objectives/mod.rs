//! Training losses, minibatch tuple construction and the training loop.

pub mod losses;
pub mod regularizer;
pub mod train;
pub mod tuples;

pub use losses::{cca_loss, ccdpo_loss, dsm_loss, dsm_plus_mclr_loss, mclr_loss, LossValue};
pub use train::{objective_step, train, Objective, TrainObserver, TrainOutcome, TrainSpec};
pub use tuples::{
    build_preference_tuples, build_tuples, denoising_terms, ContrastiveTuple, DenoisingTerm,
    PreferenceTuple, TupleApproach,
};
