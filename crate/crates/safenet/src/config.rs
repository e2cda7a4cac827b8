//! One structure gathering every pipeline knob — model architecture,
//! training protocol, cohort synthesis, and partitioning — with strict
//! TOML parsing (unknown keys rejected) and helpers for echoing the
//! resolved configuration into output artifacts so any run can be
//! reproduced from its own files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::model::SAFENetConfig;
use crate::train::{SplitSpec, TrainConfig};

/// Fully resolved run configuration. Absent TOML keys fall back to the
/// same defaults the library uses everywhere; unknown keys are errors
/// so a typo cannot silently train the wrong model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: SAFENetConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub split: SplitSpec,
    /// Run the feature-decomposition stage during training, evaluation,
    /// and export. Disabling it gives the encoder-only ablation.
    pub use_safd: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: SAFENetConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            split: SplitSpec::default(),
            use_safd: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.split.validate()?;
        Ok(())
    }

    /// The resolved configuration as TOML, exactly as `load_run_config`
    /// would read it back.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize run config: {e}")))
    }

    /// The TOML echo with every line prefixed by `# `, for embedding
    /// into text reports without disturbing their own format.
    pub fn echo_commented(&self) -> Result<String> {
        let toml = self.to_toml()?;
        let mut out = String::from("# resolved configuration\n");
        for line in toml.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Reads and strictly parses a TOML run configuration.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_run_config(&text, path)
}

/// Writes the resolved configuration next to a run's other artifacts.
pub fn save_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(path, cfg.to_toml()?)?;
    Ok(())
}

fn parse_run_config(text: &str, path: &Path) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = parse_run_config(&text, &PathBuf::from("inline")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = parse_run_config("", &PathBuf::from("inline")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(cfg.use_safd);
    }

    #[test]
    fn partial_document_overrides_only_named_keys() {
        let text = "use_safd = false\n[train]\nepochs = 3\n";
        let cfg = parse_run_config(text, &PathBuf::from("inline")).unwrap();
        assert!(!cfg.use_safd);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model, SAFENetConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = "[train]\nepochs = 3\nbatch_sizee = 10\n";
        let err = parse_run_config(text, &PathBuf::from("run.toml")).unwrap_err();
        match &err {
            Error::Parse { path, line, .. } => {
                assert_eq!(path, &PathBuf::from("run.toml"));
                assert_eq!(*line, 3);
            }
            other => panic!("expected parse error, got {other}"),
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn nested_value_errors_surface_through_validate() {
        let text = "[train]\nbatch_size = 0\n";
        let cfg = parse_run_config(text, &PathBuf::from("inline")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_prefixes_every_line() {
        let echo = RunConfig::default().echo_commented().unwrap();
        assert!(echo.lines().count() > 10);
        for line in echo.lines() {
            assert!(line.starts_with("# "), "unprefixed echo line: {line}");
        }
        assert!(echo.contains("use_safd"));
        assert!(echo.contains("[train]"));
    }

    #[test]
    fn file_round_trip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        let mut cfg = RunConfig::default();
        cfg.train.seed = 17;
        cfg.synth.n_subjects = 6;
        save_run_config(&path, &cfg).unwrap();
        let back = load_run_config(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_file_is_io_error_with_exit_code_one() {
        let err = load_run_config(Path::new("/nonexistent/config.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
