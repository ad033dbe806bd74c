use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::booster::{fit, sigmoid};
use super::matrix::FeatureMatrix;
use super::metrics::{auc, mse, MetricKind, MetricScore};
use super::params::{param_grid, GbdtParams, Objective};
use super::TrainError;
use crate::task::{Dataset, SplitPlan, TaskSpec, TaskType};

/// Best test score over the grid and the parameters that achieved it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub score: MetricScore,
    pub params: GbdtParams,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridOptions {
    /// Evaluate only these parameters instead of searching the grid.
    pub fixed_params: Option<GbdtParams>,
    /// Metric to score with; defaults to AUC for classification and MSE for
    /// regression.
    pub metric: Option<MetricKind>,
}

pub fn default_metric(task_type: TaskType) -> MetricKind {
    match task_type {
        TaskType::Classification => MetricKind::Auc,
        TaskType::Regression => MetricKind::Mse,
    }
}

/// Trains on the split's train rows at every grid point and returns the best
/// test-row score, using the task's feature columns.
pub fn grid_evaluate(
    dataset: &Dataset,
    task: &TaskSpec,
    split: &SplitPlan,
) -> Result<GridResult, TrainError> {
    grid_evaluate_columns(
        dataset,
        task,
        split,
        &task.feature_names(),
        &GridOptions::default(),
    )
}

/// Like [`grid_evaluate`] over an explicit column list. Grid points are
/// trained in parallel; the reduction keeps the first best point in grid
/// order.
pub fn grid_evaluate_columns(
    dataset: &Dataset,
    task: &TaskSpec,
    split: &SplitPlan,
    columns: &[String],
    options: &GridOptions,
) -> Result<GridResult, TrainError> {
    if columns.is_empty() {
        return Err(TrainError::Shape("no feature columns".into()));
    }
    if columns.contains(&task.label_column) {
        return Err(TrainError::Shape(format!(
            "label column `{}` used as a feature",
            task.label_column
        )));
    }
    let metric = options
        .metric
        .unwrap_or_else(|| default_metric(task.task_type));
    if metric == MetricKind::Auc && task.task_type == TaskType::Regression {
        return Err(TrainError::InvalidParams(
            "AUC needs a classification task".into(),
        ));
    }
    let labels = dataset
        .labels(task)
        .map_err(|e| TrainError::Label(e.to_string()))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<f64>>();
    let y_train = pick(&split.train_indices);
    let y_test = pick(&split.test_indices);
    let x_train = FeatureMatrix::from_dataset(dataset, columns, &split.train_indices)?;
    let x_test = FeatureMatrix::from_dataset(dataset, columns, &split.test_indices)?;

    let objective = Objective::for_task(task.task_type);
    let grid = match options.fixed_params {
        Some(p) => vec![GbdtParams {
            objective,
            seed: split.seed,
            ..p
        }],
        None => param_grid(objective, split.seed),
    };
    // Boosting is sequential and draws from one seeded stream, so the first
    // n trees of a longer fit are exactly the n-tree model. Points that
    // differ only in `n_estimators` share one fit.
    let mut groups: Vec<(GbdtParams, Vec<usize>)> = Vec::new();
    for (i, p) in grid.iter().enumerate() {
        let key = GbdtParams {
            n_estimators: 0,
            ..*p
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let grouped: Vec<Vec<(usize, Result<MetricScore, TrainError>)>> = groups
        .par_iter()
        .map(|(key, members)| {
            let longest = members
                .iter()
                .map(|&i| grid[i].n_estimators)
                .max()
                .unwrap_or(0);
            let params = GbdtParams {
                n_estimators: longest,
                ..*key
            };
            let model = match fit(&x_train, &y_train, &params) {
                Ok(m) => m,
                Err(e) => return members.iter().map(|&i| (i, Err(e.clone()))).collect(),
            };
            members
                .iter()
                .map(|&i| {
                    let margin = model.predict_margin_with(&x_test, grid[i].n_estimators);
                    let score = match metric {
                        MetricKind::Auc => auc(&margin, &y_test),
                        MetricKind::Mse => {
                            let pred: Vec<f64> = match objective {
                                Objective::Logistic => margin.into_iter().map(sigmoid).collect(),
                                Objective::SquaredError => margin,
                            };
                            mse(&pred, &y_test)
                        }
                    };
                    (i, score.map_err(TrainError::from))
                })
                .collect()
        })
        .collect();
    let mut scores: Vec<Option<Result<MetricScore, TrainError>>> = vec![None; grid.len()];
    for (i, score) in grouped.into_iter().flatten() {
        scores[i] = Some(score);
    }
    let scores = scores
        .into_iter()
        .map(|s| s.expect("every grid point scored"));

    let mut best: Option<GridResult> = None;
    for (params, score) in grid.into_iter().zip(scores) {
        let score = score?;
        if best.as_ref().is_none_or(|b| score.is_better_than(&b.score)) {
            best = Some(GridResult { score, params });
        }
    }
    Ok(best.expect("grid is never empty"))
}
