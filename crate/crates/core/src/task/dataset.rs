use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ColumnKind, TaskError, TaskSpec, TaskType};

/// One column of cell values. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|r| self.is_missing(r)).collect()
    }

    /// Numeric view of the column. Text columns are ordinal-encoded by order
    /// of first appearance (0, 1, 2, ...); missing cells stay missing.
    pub fn to_numeric(&self) -> Vec<Option<f64>> {
        match self {
            ColumnData::Numeric(v) => v.clone(),
            ColumnData::Text(v) => {
                let mut codes: IndexMap<&str, usize> = IndexMap::new();
                v.iter()
                    .map(|cell| {
                        cell.as_deref().map(|s| {
                            let next = codes.len();
                            *codes.entry(s).or_insert(next) as f64
                        })
                    })
                    .collect()
            }
        }
    }
}

/// An immutable table of named columns sharing one row count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: IndexMap<String, ColumnData>,
    row_count: usize,
}

impl Dataset {
    pub fn new(columns: Vec<(String, ColumnData)>) -> Result<Self, TaskError> {
        let row_count = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut map = IndexMap::with_capacity(columns.len());
        for (name, data) in columns {
            if data.len() != row_count {
                return Err(TaskError::InvalidTask(format!(
                    "column `{name}` has {} rows, expected {row_count}",
                    data.len()
                )));
            }
            if map.insert(name.clone(), data).is_some() {
                return Err(TaskError::InvalidTask(format!("duplicate column `{name}`")));
            }
        }
        Ok(Dataset {
            columns: map,
            row_count,
        })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.get(name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &ColumnData)> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Returns a new dataset with `extra` appended after the existing columns.
    pub fn with_columns(&self, extra: Vec<(String, ColumnData)>) -> Result<Dataset, TaskError> {
        let mut all: Vec<(String, ColumnData)> = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        all.extend(extra);
        if all.len() == self.columns.len() {
            return Ok(self.clone());
        }
        let ds = Dataset::new(all)?;
        if ds.row_count != self.row_count && !self.columns.is_empty() {
            return Err(TaskError::InvalidTask("row count mismatch".into()));
        }
        Ok(ds)
    }

    /// Label vector for `task`. Classification labels map to 0/1, with the
    /// larger of the two distinct values (numeric or lexicographic) as 1.
    pub fn labels(&self, task: &TaskSpec) -> Result<Vec<f64>, TaskError> {
        let column = &task.label_column;
        let data = self.column(column).ok_or_else(|| TaskError::Label {
            column: column.clone(),
            reason: "not present in the dataset".into(),
        })?;
        let missing = |row: usize| TaskError::Label {
            column: column.clone(),
            reason: format!("missing value at row {row}"),
        };
        match task.task_type {
            TaskType::Regression => match data {
                ColumnData::Numeric(v) => v
                    .iter()
                    .enumerate()
                    .map(|(row, x)| x.ok_or_else(|| missing(row)))
                    .collect(),
                ColumnData::Text(_) => Err(TaskError::Label {
                    column: column.clone(),
                    reason: "regression target must be numeric".into(),
                }),
            },
            TaskType::Classification => {
                let keys: Vec<LabelKey> = match data {
                    ColumnData::Numeric(v) => v
                        .iter()
                        .enumerate()
                        .map(|(row, x)| x.map(LabelKey::Num).ok_or_else(|| missing(row)))
                        .collect::<Result<_, _>>()?,
                    ColumnData::Text(v) => v
                        .iter()
                        .enumerate()
                        .map(|(row, x)| x.clone().map(LabelKey::Text).ok_or_else(|| missing(row)))
                        .collect::<Result<_, _>>()?,
                };
                let mut distinct: Vec<&LabelKey> = Vec::new();
                for k in &keys {
                    if !distinct.contains(&k) {
                        distinct.push(k);
                    }
                }
                if distinct.len() != 2 {
                    return Err(TaskError::Label {
                        column: column.clone(),
                        reason: format!(
                            "expected exactly 2 distinct classes, found {}",
                            distinct.len()
                        ),
                    });
                }
                distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
                let positive = distinct[1].clone();
                Ok(keys
                    .iter()
                    .map(|k| if *k == positive { 1.0 } else { 0.0 })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, PartialOrd)]
enum LabelKey {
    Num(f64),
    Text(String),
}

fn parse_number(cell: &str) -> Option<f64> {
    let v: f64 = cell.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

/// Reads a CSV file and its JSON metadata sidecar.
///
/// Columns declared `numeric` parse to floats with unparseable cells marked
/// missing; `categorical` columns stay text. `binary` columns and columns the
/// metadata does not describe are numeric when every non-empty cell parses,
/// text otherwise.
pub fn load_dataset(
    csv_path: impl AsRef<Path>,
    metadata_path: impl AsRef<Path>,
) -> Result<(Dataset, TaskSpec), TaskError> {
    let csv_path = csv_path.as_ref();
    let metadata_path = metadata_path.as_ref();
    let raw = fs::read_to_string(metadata_path).map_err(|source| TaskError::Io {
        path: metadata_path.to_path_buf(),
        source,
    })?;
    let task: TaskSpec = serde_json::from_str(&raw).map_err(|source| TaskError::Metadata {
        path: metadata_path.to_path_buf(),
        source,
    })?;
    task.validate()?;

    let file = fs::File::open(csv_path).map_err(|source| TaskError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| TaskError::Csv {
        path: csv_path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        for (i, cell) in record.iter().enumerate() {
            cells[i].push(cell.to_string());
        }
    }

    for column in &task.columns {
        if !headers.contains(&column.name) {
            return Err(TaskError::UnknownColumn(column.name.clone()));
        }
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (name, values) in headers.into_iter().zip(cells) {
        let kind = task.column(&name).map(|c| c.kind);
        let data = match kind {
            Some(ColumnKind::Numeric) => {
                ColumnData::Numeric(values.iter().map(|c| parse_number(c)).collect())
            }
            Some(ColumnKind::Categorical) => ColumnData::Text(text_cells(values)),
            Some(ColumnKind::Binary) | None => {
                let all_numeric = values
                    .iter()
                    .all(|c| c.trim().is_empty() || parse_number(c).is_some());
                if all_numeric {
                    ColumnData::Numeric(values.iter().map(|c| parse_number(c)).collect())
                } else {
                    ColumnData::Text(text_cells(values))
                }
            }
        };
        columns.push((name, data));
    }
    let dataset = Dataset::new(columns)?;
    // Surface label problems at load time rather than mid-run.
    dataset.labels(&task)?;
    Ok((dataset, task))
}

fn text_cells(values: Vec<String>) -> Vec<Option<String>> {
    values
        .into_iter()
        .map(|c| {
            let t = c.trim();
            (!t.is_empty()).then(|| t.to_string())
        })
        .collect()
}
