use crate::task::Dataset;

use super::TrainError;

/// Column-major numeric feature matrix. Missing cells are NaN.
///
/// Each column also keeps its non-missing row indices sorted by value (ties
/// by row index) and the list of rows where it is missing, which is what the
/// exact split search consumes.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
    sorted: Vec<Vec<u32>>,
    sorted_values: Vec<Vec<f64>>,
    missing: Vec<Vec<u32>>,
}

impl FeatureMatrix {
    /// Builds a matrix from equal-length columns; `None` and non-finite values
    /// are treated as missing.
    pub fn from_columns(
        names: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, TrainError> {
        if names.len() != columns.len() {
            return Err(TrainError::Shape(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().position(|c| c.len() != rows) {
            return Err(TrainError::Shape(format!(
                "column `{}` has {} rows, expected {rows}",
                names[bad],
                columns[bad].len()
            )));
        }
        let columns: Vec<Vec<f64>> = columns
            .into_iter()
            .map(|c| {
                c.into_iter()
                    .map(|v| v.filter(|x| x.is_finite()).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        let mut sorted = Vec::with_capacity(columns.len());
        let mut missing = Vec::with_capacity(columns.len());
        for col in &columns {
            let (mut present, absent): (Vec<u32>, Vec<u32>) =
                (0..rows as u32).partition(|&r| !col[r as usize].is_nan());
            present.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            sorted.push(present);
            missing.push(absent);
        }
        let sorted_values = sorted
            .iter()
            .zip(&columns)
            .map(|(idx, col)| idx.iter().map(|&r| col[r as usize]).collect())
            .collect();
        Ok(FeatureMatrix {
            names,
            columns,
            rows,
            sorted,
            sorted_values,
            missing,
        })
    }

    /// Selects `columns` at `rows` from a dataset. Text columns are ordinal
    /// encoded over the full column so that every row subset shares codes.
    pub fn from_dataset(
        dataset: &Dataset,
        columns: &[String],
        rows: &[usize],
    ) -> Result<Self, TrainError> {
        let mut data = Vec::with_capacity(columns.len());
        for name in columns {
            let column = dataset
                .column(name)
                .ok_or_else(|| TrainError::UnknownColumn(name.clone()))?;
            let full = column.to_numeric();
            data.push(rows.iter().map(|&r| full[r]).collect());
        }
        Self::from_columns(columns.to_vec(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    /// Values aligned with [`Self::sorted`].
    pub(crate) fn sorted_values(&self, feature: usize) -> &[f64] {
        &self.sorted_values[feature]
    }

    pub(crate) fn sorted(&self, feature: usize) -> &[u32] {
        &self.sorted[feature]
    }

    pub(crate) fn missing(&self, feature: usize) -> &[u32] {
        &self.missing[feature]
    }
}
