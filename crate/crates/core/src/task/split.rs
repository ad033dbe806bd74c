use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskError, TaskSpec, TaskType};

pub const TRAIN_FRACTION: f64 = 0.8;
const MIN_ROWS: usize = 10;

/// Disjoint train/test row indices, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

/// 8:2 split. Classification tasks are stratified by label.
pub fn make_split(dataset: &Dataset, task: &TaskSpec, seed: u64) -> Result<SplitPlan, TaskError> {
    match task.task_type {
        TaskType::Classification => {
            let labels = dataset.labels(task)?;
            split_rows(dataset.row_count(), Some(&labels), seed)
        }
        TaskType::Regression => split_rows(dataset.row_count(), None, seed),
    }
}

/// Pure split over `rows` row indices; `labels` enables stratification.
pub fn split_rows(rows: usize, labels: Option<&[f64]>, seed: u64) -> Result<SplitPlan, TaskError> {
    if rows < MIN_ROWS {
        return Err(TaskError::Split(format!(
            "need at least {MIN_ROWS} rows, got {rows}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());

    match labels {
        None => {
            let mut idx: Vec<usize> = (0..rows).collect();
            idx.shuffle(&mut rng);
            let n_train = (rows as f64 * TRAIN_FRACTION).round() as usize;
            train.extend_from_slice(&idx[..n_train]);
            test.extend_from_slice(&idx[n_train..]);
        }
        Some(labels) => {
            assert_eq!(labels.len(), rows, "label vector length");
            let mut classes: Vec<f64> = Vec::new();
            for &y in labels {
                if !classes.contains(&y) {
                    classes.push(y);
                }
            }
            classes.sort_by(f64::total_cmp);
            let groups: Vec<Vec<usize>> = classes
                .iter()
                .map(|&c| (0..rows).filter(|&r| labels[r] == c).collect())
                .collect();
            if let Some((c, g)) = classes.iter().zip(&groups).find(|(_, g)| g.len() < 2) {
                return Err(TaskError::Split(format!(
                    "class {c} has {} row(s); stratification needs at least 2",
                    g.len()
                )));
            }

            // Largest-remainder allocation keeps every class within one row of
            // 0.8 and the total at round(0.8 * rows).
            let exact: Vec<f64> = groups
                .iter()
                .map(|g| g.len() as f64 * TRAIN_FRACTION)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
            let target = (rows as f64 * TRAIN_FRACTION).round() as usize;
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.sort_by(|&a, &b| {
                let fa = exact[a] - exact[a].floor();
                let fb = exact[b] - exact[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            let mut remaining = target.saturating_sub(quota.iter().sum());
            for &i in &order {
                if remaining == 0 {
                    break;
                }
                quota[i] += 1;
                remaining -= 1;
            }
            for (group, q) in groups.into_iter().zip(quota) {
                let mut group = group;
                group.shuffle(&mut rng);
                let q = q.clamp(1, group.len() - 1);
                train.extend_from_slice(&group[..q]);
                test.extend_from_slice(&group[q..]);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train_indices: train,
        test_indices: test,
        seed,
        stratified: labels.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_split_is_80_20_and_repeatable() {
        let a = split_rows(100, None, 7).unwrap();
        let b = split_rows(100, None, 7).unwrap();
        assert_eq!(a.train_indices.len(), 80);
        assert_eq!(a.test_indices.len(), 20);
        assert_eq!(a, b);
        assert_ne!(a, split_rows(100, None, 8).unwrap());
    }

    #[test]
    fn balanced_classes_stratify_exactly() {
        let labels: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let plan = split_rows(100, Some(&labels), 3).unwrap();
        let pos_train = plan
            .train_indices
            .iter()
            .filter(|&&i| labels[i] == 1.0)
            .count();
        let pos_test = plan
            .test_indices
            .iter()
            .filter(|&&i| labels[i] == 1.0)
            .count();
        assert_eq!((pos_train, plan.train_indices.len() - pos_train), (40, 40));
        assert_eq!((pos_test, plan.test_indices.len() - pos_test), (10, 10));
        assert!(plan.stratified);
    }

    #[test]
    fn single_positive_cannot_stratify() {
        let mut labels = vec![0.0; 10];
        labels[4] = 1.0;
        assert!(matches!(
            split_rows(10, Some(&labels), 1),
            Err(TaskError::Split(_))
        ));
    }

    #[test]
    fn too_few_rows() {
        assert!(split_rows(9, None, 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_rows(rows in 10usize..400, pos_frac in 0.05f64..0.95, seed in any::<u64>()) {
            let labels: Vec<f64> = (0..rows).map(|i| if (i as f64) < rows as f64 * pos_frac { 1.0 } else { 0.0 }).collect();
            let positives = labels.iter().filter(|&&y| y == 1.0).count();
            prop_assume!(positives >= 5 && rows - positives >= 5);
            for strat in [None, Some(labels.as_slice())] {
                let plan = split_rows(rows, strat, seed).unwrap();
                let mut all: Vec<usize> = plan.train_indices.iter().chain(&plan.test_indices).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..rows).collect::<Vec<_>>());
                let expected = rows as f64 * TRAIN_FRACTION;
                prop_assert!((plan.train_indices.len() as f64 - expected).abs() <= 1.0);
                if strat.is_some() {
                    for class in [0.0, 1.0] {
                        let n = labels.iter().filter(|&&y| y == class).count() as f64;
                        let t = plan.train_indices.iter().filter(|&&i| labels[i] == class).count() as f64;
                        prop_assert!((t - n * TRAIN_FRACTION).abs() <= 1.0);
                    }
                }
            }
        }
    }
}
