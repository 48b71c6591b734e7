// SPDX-License-Identifier: MIT OR Apache-2.0

//! Optimizer, training loops with early stopping, Final-LR fitting and grid search.

pub mod adamw;
mod config;
pub mod final_lr;
pub mod grid;
pub mod solver;
mod train;

pub use adamw::AdamW;
pub use config::TrainConfig;
pub use final_lr::{fit_final_lr, FinalLrFit};
pub use grid::{grid_search, select_best, GridEntry, GridResult, GridSpace};
pub use solver::{SolverOptions, SolverReport};
pub use train::{
    carve_validation, train_probe, train_with_validation, EarlyStopping, EpochRecord, PreparedSet,
    RunSummary, StopDecision, TrainedProbe, DEFAULT_THRESHOLD,
};
