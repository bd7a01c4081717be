use std::path::{Path, PathBuf};

use qaware::eval::{gen_synthetic_bench, ingest_external, ScoredSet, SyntheticBenchSpec};
use qaware::train::{FinetuneConfig, ProbeConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "QAWARE_CONFIG";

/// Labeled evaluation data: an external manifest, or the synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Manifest of an external labeled set. When absent the synthetic
    /// benchmark below is generated in memory.
    pub manifest: Option<PathBuf>,
    pub n_base: usize,
    pub levels: usize,
    pub spec: SyntheticBenchSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            n_base: 13,
            levels: 5,
            spec: SyntheticBenchSpec::default(),
        }
    }
}

impl BenchConfig {
    pub fn load(&self) -> Result<ScoredSet, CliError> {
        match &self.manifest {
            Some(m) => {
                let got = ingest_external(m)?;
                for w in &got.warnings {
                    eprintln!("warning: {w}");
                }
                Ok(got.set)
            }
            None => Ok(gen_synthetic_bench(&self.spec, self.n_base, self.levels)?),
        }
    }
}

/// Everything a run needs. The file is TOML with optional `[train]`,
/// `[bench]`, `[probe]` and `[finetune]` tables; missing keys take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads `explicit`, else the file named by `QAWARE_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, CliError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    /// Writes the resolved config into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 3\nlr_decay_epochs = []\n[bench]\nn_base = 2\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.bench.n_base, 2);
        assert_eq!(cfg.probe, ProbeConfig::default());
    }

    #[test]
    fn round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_file_is_usage_error() {
        assert!(matches!(
            RunConfig::resolve(Some(Path::new("/nonexistent/qaware.toml"))),
            Err(CliError::Usage(_))
        ));
    }
}
