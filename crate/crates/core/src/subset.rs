//! Choosing which generated features to keep.
//!
//! With at most [`EXHAUSTIVE_LIMIT`] features every nonempty combination is
//! scored; beyond that only each feature alone and the full set are.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_lang::FeatureProgram;
use crate::gbdt::{grid_evaluate_columns, GridOptions, MetricScore};
use crate::task::{Dataset, SplitPlan, TaskSpec};

pub const EXHAUSTIVE_LIMIT: usize = 5;

/// Scores one candidate feature subset.
pub trait SubsetEvaluator: Sync {
    fn evaluate(&self, subset: &[String]) -> Result<MetricScore, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetEvaluation {
    pub features: Vec<String>,
    pub score: Option<MetricScore>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub chosen_features: Vec<String>,
    pub score: MetricScore,
    pub evaluated_count: usize,
    pub evaluations: Vec<SubsetEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("no features to search over")]
    NoFeatures,
    #[error("all {attempts} subset evaluations failed; last error: {last_error}")]
    AllFailed { attempts: usize, last_error: String },
}

/// Orders subsets by size, then by their sorted names.
pub fn subset_order(a: &[String], b: &[String]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Candidate subsets in tie-break order, each sorted by name.
pub fn candidate_subsets(names: &[String]) -> Vec<Vec<String>> {
    let mut sorted = names.to_vec();
    sorted.sort();
    sorted.dedup();
    let k = sorted.len();
    let mut subsets: Vec<Vec<String>> = if k <= EXHAUSTIVE_LIMIT {
        (1u32..(1 << k))
            .map(|mask| {
                (0..k)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| sorted[i].clone())
                    .collect()
            })
            .collect()
    } else {
        let mut s: Vec<Vec<String>> = sorted.iter().map(|n| vec![n.clone()]).collect();
        s.push(sorted.clone());
        s
    };
    subsets.sort_by(|a, b| subset_order(a, b));
    subsets
}

/// Evaluates every candidate subset and returns the best. Ties go to the
/// smaller subset, then to the lexicographically smaller name list.
pub fn search(
    names: &[String],
    evaluator: &dyn SubsetEvaluator,
) -> Result<SubsetResult, SearchError> {
    let subsets = candidate_subsets(names);
    if subsets.is_empty() {
        return Err(SearchError::NoFeatures);
    }
    let evaluations: Vec<SubsetEvaluation> = subsets
        .into_par_iter()
        .map(|features| match evaluator.evaluate(&features) {
            Ok(score) => SubsetEvaluation {
                features,
                score: Some(score),
                error: None,
            },
            Err(e) => SubsetEvaluation {
                features,
                score: None,
                error: Some(e),
            },
        })
        .collect();

    let mut best: Option<(&Vec<String>, MetricScore)> = None;
    for eval in &evaluations {
        if let Some(score) = eval.score {
            if best.is_none_or(|(_, b)| score.is_better_than(&b)) {
                best = Some((&eval.features, score));
            }
        }
    }
    match best {
        Some((features, score)) => Ok(SubsetResult {
            chosen_features: features.clone(),
            score,
            evaluated_count: evaluations.len(),
            evaluations: evaluations.clone(),
        }),
        None => Err(SearchError::AllFailed {
            attempts: evaluations.len(),
            last_error: evaluations
                .last()
                .and_then(|e| e.error.clone())
                .unwrap_or_default(),
        }),
    }
}

/// Scores subsets by grid-searched boosted trees on the task's original
/// features plus the subset.
pub struct GbdtSubsetEvaluator<'a> {
    pub dataset: &'a Dataset,
    pub task: &'a TaskSpec,
    pub split: &'a SplitPlan,
    pub options: GridOptions,
}

impl SubsetEvaluator for GbdtSubsetEvaluator<'_> {
    fn evaluate(&self, subset: &[String]) -> Result<MetricScore, String> {
        let mut columns = self.task.feature_names();
        columns.extend(subset.iter().cloned());
        grid_evaluate_columns(self.dataset, self.task, self.split, &columns, &self.options)
            .map(|r| r.score)
            .map_err(|e| e.to_string())
    }
}

/// Best subset of `program`'s features on a dataset that already holds the
/// evaluated feature columns.
pub fn select_best_subset(
    dataset: &Dataset,
    program: &FeatureProgram,
    task: &TaskSpec,
    split: &SplitPlan,
    options: &GridOptions,
) -> Result<SubsetResult, SearchError> {
    let evaluator = GbdtSubsetEvaluator {
        dataset,
        task,
        split,
        options: options.clone(),
    };
    search(&program.names(), &evaluator)
}
