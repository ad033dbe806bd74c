use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Classification,
    Regression,
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskType::Classification => "classification",
            TaskType::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub description: String,
    pub kind: ColumnKind,
}

/// The machine-learning problem handed to the model: domain, task type,
/// described columns and the objective sentence.
///
/// The JSON form of this struct is the metadata sidecar read next to the CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub domain: String,
    pub task_type: TaskType,
    pub problem_statement: String,
    pub label_column: String,
    pub columns: Vec<ColumnSpec>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        let mut seen = HashSet::new();
        for column in &self.columns {
            if column.name.trim().is_empty() {
                return Err(TaskError::InvalidTask("column with empty name".into()));
            }
            if !seen.insert(column.name.as_str()) {
                return Err(TaskError::InvalidTask(format!(
                    "column `{}` is listed twice",
                    column.name
                )));
            }
        }
        let label = self
            .column(&self.label_column)
            .ok_or_else(|| TaskError::Label {
                column: self.label_column.clone(),
                reason: "not listed among the metadata columns".into(),
            })?;
        if self.task_type == TaskType::Classification && label.kind != ColumnKind::Binary {
            return Err(TaskError::Label {
                column: label.name.clone(),
                reason: "classification tasks need a binary label column".into(),
            });
        }
        if self.feature_columns().next().is_none() {
            return Err(TaskError::InvalidTask(
                "at least one non-label column is required".into(),
            ));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Every described column except the label, in metadata order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(move |c| c.name != self.label_column)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_columns().map(|c| c.name.clone()).collect()
    }
}
