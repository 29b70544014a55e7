use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xdoge::corpus::TokenizerSpec;
use xdoge::optimizer::XdogeConfig;
use xdoge::{Error, Result};

/// The `optimize` config file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub manifest: PathBuf,
    #[serde(default)]
    pub tokenizer: TokenizerSpec,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Exact per-source dedup before tokenizing.
    #[serde(default)]
    pub dedup: bool,
    #[serde(default)]
    pub valid_fraction: f64,
    #[serde(default)]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Write the trainer checkpoint every this many steps; 0 writes it only
    /// when the run stops.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub xdoge: XdogeConfig,
}

fn default_window() -> usize {
    10_000
}

impl RunConfigFile {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.manifest = base_dir.join(&cfg.manifest);
        cfg.out_dir = cfg.out_dir.map(|d| base_dir.join(d));
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        RunConfigFile::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.manifest.is_file() {
            return Err(Error::Config(format!(
                "manifest {} does not exist",
                self.manifest.display()
            )));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing_window must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfigFile::parse(
            "manifest = 'm.toml'\n[xdoge]\nsteps = 3",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.manifest, PathBuf::from("/base/m.toml"));
        assert_eq!(cfg.smoothing_window, 10_000);
        assert_eq!(cfg.tokenizer, TokenizerSpec::Byte);
        assert_eq!(cfg.xdoge.steps, 3);
        assert_eq!(cfg.xdoge.batch_instances, 128);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfigFile::parse("manifest = 'm'\nsmoothing = 3", Path::new(".")).is_err());
        assert!(RunConfigFile::parse("manifest = 'm'\n[xdoge]\nlr = 3.0", Path::new(".")).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = "manifest = 'm.toml'\n[tokenizer]\nkind = 'alphabet'\nvocab_size = 16\n[xdoge]\nmu = 0.5\nvocab_size = 16";
        let cfg = RunConfigFile::parse(text, Path::new("")).unwrap();
        assert_eq!(
            RunConfigFile::parse(&cfg.to_toml(), Path::new("")).unwrap(),
            cfg
        );
    }
}
