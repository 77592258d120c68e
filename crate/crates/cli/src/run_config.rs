//! The `evolve` run file. Relative paths are resolved against the
//! directory of the run file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amrf_core::classify::StubClassifierConfig;
use amrf_core::eap::{default_candidates, AmrfSettings};
use amrf_core::segment::OracleConfig;
use amrf_core::{
    BaselineSegmenter, CandidateSpec, EvalOptions, OracleSegmenter, SegmenterAdapter, SegmenterConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A segmenter and its configuration, as written in run files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "adapter", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    Baseline {
        #[serde(default)]
        config: SegmenterConfig,
    },
    Oracle {
        #[serde(default)]
        config: OracleConfig,
    },
}

impl AdapterSpec {
    /// `mask_dir` of an oracle is taken relative to `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn SegmenterAdapter>, CliError> {
        Ok(match self {
            AdapterSpec::Baseline { config } => Box::new(BaselineSegmenter::new(*config)?),
            AdapterSpec::Oracle { config } => {
                let mut config = config.clone();
                config.mask_dir = config.mask_dir.map(|d| base.join(d));
                Box::new(OracleSegmenter::from(config))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training manifest; every record needs a mask.
    pub train: PathBuf,
    /// Evaluation manifests by dataset name.
    pub tests: BTreeMap<String, PathBuf>,
    pub segmenter: AdapterSpec,
    pub reference: AdapterSpec,
    /// `None` fits the classifier on ground-truth crops of the training set.
    pub classifier: Option<StubClassifierConfig>,
    /// Initial pool file; `None` starts from the default pool.
    pub pool: Option<PathBuf>,
    pub candidates: Vec<CandidateSpec>,
    pub fraction: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub trials_per_candidate: usize,
    pub admit_all: bool,
    pub seed: u64,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = AmrfSettings::default();
        Self {
            train: PathBuf::new(),
            tests: BTreeMap::new(),
            segmenter: AdapterSpec::Baseline {
                config: SegmenterConfig::default(),
            },
            reference: AdapterSpec::Oracle {
                config: OracleConfig::default(),
            },
            classifier: None,
            pool: None,
            candidates: default_candidates(),
            fraction: s.fraction,
            epsilon: s.epsilon,
            max_iterations: s.max_iterations,
            trials_per_candidate: s.trials_per_candidate,
            admit_all: s.admit_all,
            seed: s.seed,
            eval: s.eval,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| amrf_core::Error::Config(format!("{}: {e}", path.display())).into())
    }

    pub fn settings(&self) -> AmrfSettings {
        AmrfSettings {
            candidates: self.candidates.clone(),
            fraction: self.fraction,
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
            trials_per_candidate: self.trials_per_candidate,
            admit_all: self.admit_all,
            seed: self.seed,
            eval: self.eval,
        }
    }

    /// Checks numeric ranges and that every referenced file exists.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        self.settings().validate()?;
        if self.train.as_os_str().is_empty() {
            return Err(amrf_core::Error::Config("run file names no training manifest".into()).into());
        }
        if self.tests.is_empty() {
            return Err(amrf_core::Error::Config("run file names no evaluation manifest".into()).into());
        }
        for p in std::iter::once(&self.train).chain(self.tests.values()).chain(&self.pool) {
            let full = base.join(p);
            if !full.exists() {
                return Err(amrf_core::Error::FileNotFound(full).into());
            }
        }
        if let Some(c) = &self.classifier {
            c.validate()?;
        }
        Ok(())
    }
}
