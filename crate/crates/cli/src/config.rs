use std::fmt;
use std::path::Path;

use clap::ValueEnum;
use protoadapt::bayes_adapter::BayesConfig;
use protoadapt::map_adapter::MapConfig;
use protoadapt::metrics::{DEFAULT_BINS, DEFAULT_LEVELS};
use protoadapt::optim::KlAnneal;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Zeroshot,
    Map,
    Bayes,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Zeroshot, Method::Map, Method::Bayes];

    pub fn name(self) -> &'static str {
        match self {
            Method::Zeroshot => "zeroshot",
            Method::Map => "map",
            Method::Bayes => "bayes",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AnnealArg {
    None,
    Linear,
}

impl From<AnnealArg> for KlAnneal {
    fn from(a: AnnealArg) -> Self {
        match a {
            AnnealArg::None => KlAnneal::None,
            AnnealArg::Linear => KlAnneal::Linear,
        }
    }
}

/// Full effective configuration of one run. Manifests embed it verbatim so a
/// run can be repeated with `--config <manifest>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub shots: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub prior_std: f64,
    pub mc_train: usize,
    pub mc_predict: usize,
    pub scale: f64,
    pub kl_anneal: KlAnneal,
    pub levels: Vec<f64>,
    pub bins: usize,
    pub format: Format,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bayes = BayesConfig::default();
        Self {
            method: Method::Bayes,
            shots: 16,
            seed: bayes.seed,
            epochs: bayes.epochs,
            batch_size: bayes.batch_size,
            lr: bayes.lr,
            momentum: bayes.momentum,
            prior_std: bayes.prior_std,
            mc_train: bayes.s_mc_train,
            mc_predict: bayes.s_mc_predict,
            scale: bayes.scale,
            kl_anneal: bayes.kl_anneal,
            levels: DEFAULT_LEVELS.to_vec(),
            bins: DEFAULT_BINS,
            format: Format::Json,
            deterministic: false,
        }
    }
}

impl RunConfig {
    /// Reads either a bare config or a run manifest carrying one under `config`.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(c) => c.clone(),
            None => value,
        };
        serde_json::from_value(inner).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.shots == 0 {
            return Err(CliError::Usage("shots must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(CliError::Usage("bins must be at least 1".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(CliError::Usage(
                "confidence levels must be non-empty and strictly between 0 and 1".into(),
            ));
        }
        self.bayes_config().validate()?;
        Ok(())
    }

    pub fn map_config(&self, num_classes: usize) -> MapConfig {
        MapConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
            scale: self.scale,
            ..MapConfig::from_prior_std(num_classes, self.prior_std)
        }
    }

    pub fn bayes_config(&self) -> BayesConfig {
        BayesConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            s_mc_train: self.mc_train,
            s_mc_predict: self.mc_predict,
            prior_std: self.prior_std,
            seed: self.seed,
            scale: self.scale,
            kl_anneal: self.kl_anneal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_core_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.bayes_config(), BayesConfig::default());
        let map = cfg.map_config(3);
        assert_eq!(map.lambdas, vec![1.0 / (2.0 * 0.01 * 0.01); 3]);
        assert_eq!(map.epochs, 300);
        cfg.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["learning_rate"] = 0.5.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn rejects_bad_levels_and_params() {
        for levels in [vec![1.5], vec![0.5, 1.0], vec![0.0], vec![]] {
            let cfg = RunConfig {
                levels,
                ..RunConfig::default()
            };
            assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        }
        let cfg = RunConfig {
            lr: -1.0,
            ..RunConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
