//! Gradient-boosted decision trees with exact greedy splits, plus the AUC and
//! MSE metrics and the hyperparameter grid used to score feature sets.

mod booster;
mod grid;
mod matrix;
mod metrics;
mod params;
mod tree;

pub use booster::{
    fit, fit_traced, objective_loss, sigmoid, Model, RoundTrace, MODEL_FORMAT_VERSION,
};
pub use grid::{default_metric, grid_evaluate, grid_evaluate_columns, GridOptions, GridResult};
pub use matrix::FeatureMatrix;
pub use metrics::{auc, mse, Direction, MetricError, MetricKind, MetricScore};
pub use params::{
    param_grid, GbdtParams, Objective, COLSAMPLES, LAMBDA, LEARNING_RATES, MAX_DEPTHS,
    MIN_CHILD_WEIGHT, N_ESTIMATORS, SUBSAMPLES,
};
pub use tree::{Node, Tree};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid label at row {0}")]
    InvalidLabel(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("label error: {0}")]
    Label(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
