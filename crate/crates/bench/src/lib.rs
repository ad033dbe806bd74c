//! Seeded fixtures shared by the benchmarks.

use featgen_core::gbdt::FeatureMatrix;
use featgen_core::task::{ColumnData, ColumnKind, ColumnSpec, Dataset, TaskSpec, TaskType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores with ties and balanced binary labels.
pub fn scores_and_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let scores = labels
        .iter()
        .map(|&y| ((y * 0.3 + rng.random_range(0.0..1.0)) * 100.0).round() / 100.0)
        .collect();
    (scores, labels)
}

/// `features` uniform columns; the label is the sign of the first one.
pub fn matrix(n: usize, features: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<Option<f64>>> = (0..features)
        .map(|_| (0..n).map(|_| Some(rng.random_range(-1.0..1.0))).collect())
        .collect();
    let y = columns[0]
        .iter()
        .map(|v| if v.unwrap() > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let names = (0..features).map(|i| format!("x{i}")).collect();
    (
        FeatureMatrix::from_columns(names, columns).expect("valid matrix"),
        y,
    )
}

/// A frame with a text key `g`, numeric `a` and `b`, and a binary label `y`.
pub fn frame(n: usize, seed: u64) -> (Dataset, TaskSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num = |rng: &mut ChaCha8Rng| {
        ColumnData::Numeric((0..n).map(|_| Some(rng.random_range(0.5..5.0))).collect())
    };
    let g = ColumnData::Text(
        (0..n)
            .map(|_| Some(format!("k{}", rng.random_range(0..20))))
            .collect(),
    );
    let a = num(&mut rng);
    let b = num(&mut rng);
    let y = ColumnData::Numeric((0..n).map(|i| Some((i % 2) as f64)).collect());
    let dataset = Dataset::new(vec![
        ("g".into(), g),
        ("a".into(), a),
        ("b".into(), b),
        ("y".into(), y),
    ])
    .expect("valid frame");
    let col = |name: &str, kind| ColumnSpec {
        name: name.into(),
        description: name.into(),
        kind,
    };
    let task = TaskSpec {
        domain: "Bench".into(),
        task_type: TaskType::Classification,
        problem_statement: "predict y".into(),
        label_column: "y".into(),
        columns: vec![
            col("g", ColumnKind::Categorical),
            col("a", ColumnKind::Numeric),
            col("b", ColumnKind::Numeric),
            col("y", ColumnKind::Binary),
        ],
    };
    (dataset, task)
}

pub const PROGRAM: &str = "df['r'] = df['a'] / df['b']\n\
df['s'] = df.groupby('g')['a'].transform('sum')\n\
df['v'] = df.groupby('g')['b'].transform(lambda x: ((x - x.mean())**2).mean())\n\
df['w'] = df['a'].where(df['b'] > 2, 0).fillna(0) + np.log(df['b'])";
