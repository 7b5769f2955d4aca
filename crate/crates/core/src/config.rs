//! The JSON configuration document shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adain::StylizeConfig;
use crate::augment::{BlurMirrorConfig, PmdConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::tcps::TcpsConfig;

/// All settings, one section per module. Every key is optional and unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub stylize: StylizeConfig,
    pub tcps: TcpsConfig,
    pub sampler: SamplerConfig,
    pub pmd: PmdConfig,
    pub blur: BlurMirrorConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uses `seed` for every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.pipeline.seed = seed;
        self.sampler.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.stylize.validate()?;
        self.tcps.validate()?;
        self.sampler.validate()?;
        self.pmd.validate()?;
        self.blur.validate()
    }
}
