use std::fs;
use std::path::{Path, PathBuf};

use featgen_core::discovery::LoopParams;
use featgen_core::llm::EndpointConfig;
use featgen_core::preference::DEFAULT_SAMPLES;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    /// Label used in logs and reports; defaults to the CSV file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// One discovery run. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    /// JSON array of canned responses, replayed from the start for every
    /// experiment. When set, no endpoint is contacted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_responses: Option<PathBuf>,
    #[serde(default, rename = "loop")]
    pub loop_params: LoopParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_method")]
    pub method: String,
    /// Iterations for unconditional preference sampling.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_method() -> String {
    "featgen".into()
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl RunConfig {
    pub fn new(csv: impl Into<PathBuf>, metadata: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: DatasetPaths {
                csv: csv.into(),
                metadata: metadata.into(),
                name: None,
            },
            endpoint: EndpointConfig::default(),
            scripted_responses: None,
            loop_params: LoopParams::default(),
            output_dir: default_output_dir(),
            method: default_method(),
            samples: default_samples(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let config = RunConfig::parse(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(config.resolved(base))
    }

    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.csv);
        fix(&mut self.dataset.metadata);
        fix(&mut self.output_dir);
        if let Some(p) = self.scripted_responses.as_mut() {
            fix(p);
        }
        self
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.name.clone().unwrap_or_else(|| {
            self.dataset
                .csv
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    /// Checks that input paths exist and parameters are in range.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut inputs = vec![&self.dataset.csv, &self.dataset.metadata];
        inputs.extend(self.scripted_responses.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(CliError::config(format!("{}: no such file", p.display())));
            }
        }
        self.loop_params.validate().map_err(CliError::config)?;
        if self.samples == 0 {
            return Err(CliError::config("samples must be at least 1"));
        }
        Ok(())
    }

    pub fn load_script(&self) -> Result<Option<Vec<String>>, CliError> {
        let Some(path) = &self.scripted_responses else {
            return Ok(None);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let script: Vec<String> = serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!(
                "{}: expected a JSON array of strings: {e}",
                path.display()
            ))
        })?;
        if script.is_empty() {
            return Err(CliError::config(format!(
                "{}: no responses",
                path.display()
            )));
        }
        Ok(Some(script))
    }
}
