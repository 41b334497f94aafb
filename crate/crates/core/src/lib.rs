//! Synthetic rear-end crash generation.
//!
//! The crate turns a handful of biased, partially observed crash datasets into a
//! weighted synthetic crash population that covers the full severity range:
//!
//! * [`profile`] fits speed traces to a piecewise-linear kinematics model,
//! * [`weighting`] reweights biased samples (KNN weighting, IPF) and compares
//!   weighted distributions (weighted KS, weighted Pearson),
//! * [`dist`] fits parametric marginals and per-sub-dataset copula mixtures,
//! * [`fusion`] chains those pieces to build the reference initial-state dataset,
//! * [`driver`] and [`sim`] simulate lead/following vehicle pairs at 20 Hz and
//!   search for conflicts that crash on schedule,
//! * [`impact`] estimates crash severity (Delta-v),
//! * [`validation`] compares the weighted output against its references,
//! * [`pipeline`] wires everything into reproducible, file-based stages.
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory (`cargo run --release --example <name>`).

pub mod dist;
pub mod driver;
pub mod error;
pub mod fusion;
pub mod impact;
pub mod model;
pub mod pipeline;
pub mod profile;
pub mod sim;
pub(crate) mod util;
pub mod validation;
pub mod weighting;

pub use error::{Error, Result};
pub use model::{
    CrashEvent, EventSchema, MassRatioRecord, ScenarioSpec, Source, SpeedProfile, WeightedDataset,
};
