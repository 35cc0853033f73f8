//! Experiment orchestration for `guidefree`: JSON configs, run directories,
//! verification suites, sampling, sweeps and SVG plots. The `guidefree`
//! binary is a thin command-line layer over this crate.

pub mod config;
pub mod plot;
pub mod run;
pub mod sample;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use run::{train_run, RunManifest};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/lab.md")]
pub struct LabChapter;
