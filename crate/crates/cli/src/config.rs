use std::fs;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use slogan_core::datasets::{DatasetSpec, LabeledDataset};
use slogan_core::metrics::EvalOptions;
use slogan_core::stein::verify::VerifyConfig;
use slogan_core::trainer::{ManipulationConfig, TrainConfig};

use crate::error::CliError;

/// Current value of the `version` field.
pub const CONFIG_VERSION: u32 = 1;

/// A complete run description. `seed` overrides `train.seed` and `eval.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    /// Relative paths resolve against the working directory.
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub manipulation: ManipulationConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = parse_json(&text, path)?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::User(format!(
                "{}: at `version`: unsupported config version {} (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        cfg.train.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
        Ok(cfg)
    }

    /// Loads the dataset, resolving CSV paths against the config's directory.
    pub fn load_dataset(&self, config_path: &Path) -> Result<LabeledDataset, CliError> {
        let base = config_path.parent().filter(|p| !p.as_os_str().is_empty());
        let at = match &self.dataset {
            DatasetSpec::Csv { path, .. } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                format!("at `dataset.path` ({})", p.display())
            }
            _ => "at `dataset`".to_string(),
        };
        let ds = self.dataset.load(base).map_err(|e| CliError::from(e).context(&at))?;
        self.train.validate(ds.dim()).map_err(|e| CliError::User(format!("at `train`: {e}")))?;
        Ok(ds)
    }
}

pub fn load_verify_config(path: &Path) -> Result<VerifyConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    parse_json(&text, path)
}

/// Deserializes with the failing field's path in the error message.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let at = if at == "." { "<root>".to_string() } else { at };
        CliError::User(format!("{}: at `{at}`: {}", path.display(), e.inner()))
    })
}

pub fn schema_json() -> String {
    let schema = schemars::schema_for!(RunConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
