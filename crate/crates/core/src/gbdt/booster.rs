use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use super::params::{GbdtParams, Objective};
use super::tree::{grow_tree, Tree};
use super::TrainError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A fitted boosted ensemble. Leaf values already include the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format_version: u32,
    pub objective: Objective,
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub params: GbdtParams,
    pub trees: Vec<Tree>,
}

impl Model {
    /// Raw additive scores (log-odds for the logistic objective).
    pub fn predict_margin(&self, x: &FeatureMatrix) -> Vec<f64> {
        self.predict_margin_with(x, self.trees.len())
    }

    /// Margins using only the first `n_trees` trees.
    pub fn predict_margin_with(&self, x: &FeatureMatrix, n_trees: usize) -> Vec<f64> {
        assert_eq!(
            x.n_features(),
            self.feature_names.len(),
            "feature matrix does not match the model"
        );
        let trees = &self.trees[..n_trees.min(self.trees.len())];
        (0..x.rows())
            .map(|r| self.base_score + trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>())
            .collect()
    }

    /// Probabilities for the logistic objective, raw values otherwise.
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let margin = self.predict_margin(x);
        match self.objective {
            Objective::Logistic => margin.into_iter().map(sigmoid).collect(),
            Objective::SquaredError => margin,
        }
    }

    /// Versioned JSON dump of the tree structure, for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

#[inline]
pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Mean training loss: log-loss for the logistic objective, squared error
/// otherwise.
pub fn objective_loss(objective: Objective, margins: &[f64], y: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| match objective {
            // log(1 + e^m) - t*m, computed without overflow.
            Objective::Logistic => m.max(0.0) + (-m.abs()).exp().ln_1p() - t * m,
            Objective::SquaredError => (m - t) * (m - t),
        })
        .sum();
    total / margins.len() as f64
}

fn validate(x: &FeatureMatrix, y: &[f64], params: &GbdtParams) -> Result<(), TrainError> {
    if x.rows() != y.len() {
        return Err(TrainError::Shape(format!(
            "{} feature rows for {} labels",
            x.rows(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(TrainError::TooFewRows(y.len()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::InvalidLabel(i));
    }
    if params.max_depth == 0 {
        return Err(TrainError::InvalidParams(
            "max_depth must be positive".into(),
        ));
    }
    let rate_ok = params.learning_rate > 0.0 && params.learning_rate.is_finite();
    let sample_ok = |v: f64| v > 0.0 && v <= 1.0;
    if !rate_ok || !sample_ok(params.subsample) || !sample_ok(params.colsample_bytree) {
        return Err(TrainError::InvalidParams(
            "learning_rate must be positive; subsample and colsample_bytree in (0, 1]".into(),
        ));
    }
    if params.objective == Objective::Logistic {
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(TrainError::InvalidLabel(i));
        }
        let positives = y.iter().filter(|&&v| v == 1.0).count();
        if positives == 0 || positives == y.len() {
            return Err(TrainError::SingleClass);
        }
    }
    Ok(())
}

/// Loss bookkeeping for one boosting round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Rows the round's tree was fit on.
    pub in_bag_rows: usize,
    /// Mean loss over those rows before and after adding the tree.
    pub in_bag_before: f64,
    pub in_bag_after: f64,
    /// Mean loss over every training row after adding the tree.
    pub full_after: f64,
}

/// Fits a boosted tree ensemble. Deterministic for fixed inputs and
/// `params.seed`.
pub fn fit(x: &FeatureMatrix, y: &[f64], params: &GbdtParams) -> Result<Model, TrainError> {
    fit_inner(x, y, params, None)
}

/// Like [`fit`], also returning per-round training losses. The model is
/// identical to the one [`fit`] produces.
pub fn fit_traced(
    x: &FeatureMatrix,
    y: &[f64],
    params: &GbdtParams,
) -> Result<(Model, Vec<RoundTrace>), TrainError> {
    let mut trace = Vec::with_capacity(params.n_estimators);
    let model = fit_inner(x, y, params, Some(&mut trace))?;
    Ok((model, trace))
}

fn fit_inner(
    x: &FeatureMatrix,
    y: &[f64],
    params: &GbdtParams,
    mut trace: Option<&mut Vec<RoundTrace>>,
) -> Result<Model, TrainError> {
    validate(x, y, params)?;
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match params.objective {
        Objective::Logistic => (mean / (1.0 - mean)).ln(),
        Objective::SquaredError => mean,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut margin = vec![base_score; n];
    let mut gh = vec![[0.0; 2]; n];
    let n_features = x.n_features();
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let all_features: Vec<usize> = (0..n_features).collect();
    let n_cols = ((params.colsample_bytree * n_features as f64).round() as usize)
        .clamp(1, n_features.max(1));
    let mut trees = Vec::with_capacity(params.n_estimators);

    for _ in 0..params.n_estimators {
        for i in 0..n {
            match params.objective {
                Objective::Logistic => {
                    let p = sigmoid(margin[i]);
                    gh[i] = [p - y[i], (p * (1.0 - p)).max(1e-16)];
                }
                Objective::SquaredError => {
                    gh[i] = [margin[i] - y[i], 1.0];
                }
            }
        }
        let sampled: Vec<u32> = if params.subsample < 1.0 {
            let picked: Vec<u32> = (0..n as u32)
                .filter(|_| rng.random::<f64>() < params.subsample)
                .collect();
            if picked.is_empty() {
                all_rows.clone()
            } else {
                picked
            }
        } else {
            all_rows.clone()
        };
        let features: Vec<usize> = if n_cols < n_features {
            let mut f = index::sample(&mut rng, n_features, n_cols).into_vec();
            f.sort_unstable();
            f
        } else {
            all_features.clone()
        };
        let tree = grow_tree(
            x,
            &gh,
            &sampled,
            &features,
            params.max_depth,
            params.learning_rate,
        );
        let in_bag_loss = |margin: &[f64]| {
            let m: Vec<f64> = sampled.iter().map(|&r| margin[r as usize]).collect();
            let t: Vec<f64> = sampled.iter().map(|&r| y[r as usize]).collect();
            objective_loss(params.objective, &m, &t)
        };
        let before = trace.as_ref().map(|_| in_bag_loss(&margin));
        for (i, m) in margin.iter_mut().enumerate() {
            *m += tree.predict_row(x, i);
        }
        if let (Some(trace), Some(in_bag_before)) = (trace.as_deref_mut(), before) {
            trace.push(RoundTrace {
                in_bag_rows: sampled.len(),
                in_bag_before,
                in_bag_after: in_bag_loss(&margin),
                full_after: objective_loss(params.objective, &margin, y),
            });
        }
        trees.push(tree);
    }
    Ok(Model {
        format_version: MODEL_FORMAT_VERSION,
        objective: params.objective,
        base_score,
        feature_names: x.names().to_vec(),
        params: *params,
        trees,
    })
}
