//! Pipeline configuration: one TOML or JSON file, then environment, then flags.

use std::path::{Path, PathBuf};

use h2h_core::FitConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SIZE: u32 = 256;
pub const MIN_SIZE: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct PipelineConfig {
    pub model: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub gaze: Option<PathBuf>,
    pub width: u32,
    pub height: u32,
    pub output_dir: PathBuf,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
    pub recenter_translation: bool,
    pub emit_heatmaps: bool,
    pub fit: FitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: None,
            landmarks: None,
            gaze: None,
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            output_dir: PathBuf::from("."),
            threads: 0,
            recenter_translation: true,
            emit_heatmaps: false,
            fit: FitConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; JSON when the extension is `.json`, TOML otherwise.
    /// Relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.model);
        resolve(base, &mut cfg.landmarks);
        resolve(base, &mut cfg.gaze);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.width < MIN_SIZE || self.height < MIN_SIZE {
            return Err(CliError::Config(format!(
                "image size {}x{} is below the {MIN_SIZE}x{MIN_SIZE} minimum",
                self.width, self.height
            )));
        }
        self.fit
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
