//! Population size estimation from overlapping capture lists.
//!
//! The estimators are cross-fitted and doubly robust: nuisance models for
//! the conditional capture probabilities are fit out of fold, and the
//! resulting estimate of the capture probability stays consistent if either
//! the single-list or the joint model is estimated well.

pub mod bench;
pub mod config;
pub mod crossfit;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod normal;
pub mod seed;
pub mod simulator;
pub mod svg;

pub use crossfit::{assign_folds, crossfit_nuisances, FoldAssignment, NuisanceEstimates};
pub use dataset::{
    check_format, load_dataset, reformat, Covariate, Dataset, FormatReport, RawTable,
};
pub use error::{Error, Result};
pub use estimator::{
    popsize, popsize_cond, EstimateRow, Method, PairSelection, PopsizeOptions, ResultTable,
};
pub use learners::{Hyper, LearnerKind, ListPair, QTriple};
pub use simulator::{calibrate_ep, simulate, DgpSpec, SimOutput};
