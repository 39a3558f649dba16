use std::path::{Path, PathBuf};

use isectreg_core::{SplitFractions, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "ISECTREG_SEED";
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    GenData,
    Train,
    EvalFidelity,
    ConvergenceDemo,
    ReproduceClaim,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::GenData => "gen-data",
            Mode::Train => "train",
            Mode::EvalFidelity => "eval-fidelity",
            Mode::ConvergenceDemo => "convergence-demo",
            Mode::ReproduceClaim => "reproduce-claim",
        }
    }
}

/// Everything a command reads from its config document. Every field has a
/// default, so `{}` is a valid config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When set, must agree with the command being run.
    pub mode: Option<Mode>,
    /// Used when the command is not given `--out`.
    pub out_dir: Option<PathBuf>,
    pub synth: SynthSpec,
    pub split: SplitFractions,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads the config at `path` (defaults when `None`) and applies the
    /// seed override from the environment.
    pub fn load(path: Option<&Path>, mode: Mode) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Some(m) = config.mode {
            if m != mode {
                return Err(CliError::Validation(format!(
                    "mode: config selects {} but the command is {}",
                    m.as_str(),
                    mode.as_str()
                )));
            }
        }
        config.mode = Some(mode);
        if let Some(seed) = seed_override()? {
            config.synth.seed = seed;
            config.train.seed = seed;
        }
        Ok(config)
    }

    /// `--out` wins over `out_dir`.
    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| CliError::Validation("out_dir: no output directory given".into()))
    }

    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        crate::write_json(&dir.join(CONFIG_ECHO), self)
    }
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("{SEED_ENV}: not an unsigned integer: {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Validation(format!("{SEED_ENV}: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ExperimentConfig::parse("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [
            r#"{"bogus": 1}"#,
            r#"{"synth": {"m": 10, "bogus": 1}}"#,
            r#"{"train": {"bogus": 1}}"#,
            r#"{"split": {"train": 0.5, "val": 0.25, "test": 0.25, "bogus": 1}}"#,
        ] {
            assert!(matches!(ExperimentConfig::parse(doc), Err(CliError::Validation(_))), "{doc}");
        }
    }

    #[test]
    fn partial_sections_keep_the_other_defaults() {
        let c = ExperimentConfig::parse(r#"{"synth": {"m": 50}, "train": {"epochs": 2}, "mode": "train"}"#).unwrap();
        assert_eq!(c.synth.m, 50);
        assert_eq!(c.synth.k, SynthSpec::default().k);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.lambda1, TrainConfig::default().lambda1);
        assert_eq!(c.mode, Some(Mode::Train));
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig {
            mode: Some(Mode::GenData),
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }
}
