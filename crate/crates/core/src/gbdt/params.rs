use serde::{Deserialize, Serialize};

use crate::task::TaskType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Logistic,
    SquaredError,
}

impl Objective {
    pub fn for_task(task_type: TaskType) -> Objective {
        match task_type {
            TaskType::Classification => Objective::Logistic,
            TaskType::Regression => Objective::SquaredError,
        }
    }
}

pub const MAX_DEPTHS: [usize; 3] = [3, 5, 7];
pub const LEARNING_RATES: [f64; 2] = [0.01, 0.1];
pub const N_ESTIMATORS: [usize; 3] = [50, 100, 200];
pub const SUBSAMPLES: [f64; 2] = [0.8, 1.0];
pub const COLSAMPLES: [f64; 2] = [0.8, 1.0];

/// L2 penalty on leaf weights.
pub const LAMBDA: f64 = 1.0;
/// Smallest hessian sum a child may hold.
pub const MIN_CHILD_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub objective: Objective,
    pub seed: u64,
}

impl GbdtParams {
    pub fn is_grid_member(&self) -> bool {
        MAX_DEPTHS.contains(&self.max_depth)
            && LEARNING_RATES.contains(&self.learning_rate)
            && N_ESTIMATORS.contains(&self.n_estimators)
            && SUBSAMPLES.contains(&self.subsample)
            && COLSAMPLES.contains(&self.colsample_bytree)
    }
}

/// All 72 grid points, `max_depth` varying slowest and `colsample_bytree`
/// fastest.
pub fn param_grid(objective: Objective, seed: u64) -> Vec<GbdtParams> {
    let mut grid = Vec::with_capacity(72);
    for &max_depth in &MAX_DEPTHS {
        for &learning_rate in &LEARNING_RATES {
            for &n_estimators in &N_ESTIMATORS {
                for &subsample in &SUBSAMPLES {
                    for &colsample_bytree in &COLSAMPLES {
                        grid.push(GbdtParams {
                            max_depth,
                            learning_rate,
                            n_estimators,
                            subsample,
                            colsample_bytree,
                            objective,
                            seed,
                        });
                    }
                }
            }
        }
    }
    grid
}
