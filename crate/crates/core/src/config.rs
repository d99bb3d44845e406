//! Pipeline configuration document.
//!
//! ```json
//! { "seed": 7, "phantom": { "dims": [40, 8, 64, 64] }, "train": { "epochs": 5 } }
//! ```
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::phantom::CorpusConfig;
use crate::preproc::PreprocConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    /// Global seed; overridden by `--seed` or `PWTK_SEED`.
    pub seed: u64,
    pub phantom: CorpusConfig,
    pub preproc: PreprocConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.phantom.dims;
        if c.contains(&0) {
            return Err(Error::Config(format!(
                "phantom dims {c:?} must be positive"
            )));
        }
        self.preproc.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if !self
            .preproc
            .patch_size
            .is_multiple_of(self.arch.spatial_multiple())
        {
            return Err(Error::Config(format!(
                "patch_size {} is not divisible by {}",
                self.preproc.patch_size,
                self.arch.spatial_multiple()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_and_unknown_keys() {
        let c = PipelineConfig::from_json(r#"{"seed": 3, "train": {"epochs": 5}}"#).unwrap();
        assert_eq!((c.seed, c.train.epochs, c.train.batch_size), (3, 5, 4));
        assert_eq!(c.preproc, PreprocConfig::desk());
        assert!(matches!(
            PipelineConfig::from_json(r#"{"sed": 3}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"train": {"learning_rat": 1}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_json(r#"{"train": {"batch_size": 0}}"#),
            Err(Error::Config(_))
        ));
        let round = serde_json::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(
            PipelineConfig::from_json(&round).unwrap(),
            PipelineConfig::default()
        );
    }
}
