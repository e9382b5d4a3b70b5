//! Experiment configuration read from JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricParams;
use crate::phantom::PhantomSpec;
use crate::pipeline::{Enabled, ReconConfig};
use crate::sampling::MaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Xt,
    Xf,
    Kt,
}

impl Prior {
    pub fn name(self) -> &'static str {
        match self {
            Prior::Xt => "xt",
            Prior::Xf => "xf",
            Prior::Kt => "kt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xt" => Some(Prior::Xt),
            "xf" => Some(Prior::Xf),
            "kt" => Some(Prior::Kt),
            _ => None,
        }
    }
}

/// Enable flags with the given priors switched off.
pub fn disable(mut enabled: Enabled, priors: &BTreeSet<Prior>) -> Enabled {
    for p in priors {
        match p {
            Prior::Xt => enabled.xt = false,
            Prior::Xf => enabled.xf = false,
            Prior::Kt => enabled.kt = false,
        }
    }
    enabled
}

/// Method label of an ablation, e.g. `minus-xt` or `minus-xf-kt`.
pub fn ablation_label(priors: &BTreeSet<Prior>) -> String {
    if priors.is_empty() {
        return "full".into();
    }
    let names: Vec<&str> = priors.iter().map(|p| p.name()).collect();
    format!("minus-{}", names.join("-"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub accelerations: Vec<usize>,
    /// Number of seeded phantoms; case `k` uses seed `phantom.seed + k`.
    pub cases: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { accelerations: vec![4, 8, 10], cases: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub mask: MaskSpec,
    pub recon: ReconConfig,
    pub metrics: MetricParams,
    pub output_dir: PathBuf,
    pub ablations: Vec<BTreeSet<Prior>>,
    pub sweep: Sweep,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            mask: MaskSpec::default(),
            recon: ReconConfig::default(),
            metrics: MetricParams::default(),
            output_dir: PathBuf::from("out"),
            ablations: [Prior::Xt, Prior::Xf, Prior::Kt].map(|p| BTreeSet::from([p])).to_vec(),
            sweep: Sweep::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.mask.validate()?;
        self.recon.validate()?;
        self.metrics.validate()?;
        if (self.mask.ny, self.mask.t_frames) != (self.phantom.ny, self.phantom.t_frames) {
            return Err(Error::Config(format!(
                "mask is {} lines x {} frames but phantom is {} x {}",
                self.mask.ny, self.mask.t_frames, self.phantom.ny, self.phantom.t_frames
            )));
        }
        if self.sweep.accelerations.contains(&0) {
            return Err(Error::Config("sweep accelerations must be at least 1".into()));
        }
        if self.sweep.cases == 0 {
            return Err(Error::Config("sweep needs at least one case".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex prefix of the SHA-256 of the compact JSON serialization, with the
    /// output directory left out so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let content = Self { output_dir: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&content).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Noise seed paired with a phantom seed.
    pub fn noise_seed(phantom_seed: u64) -> u64 {
        phantom_seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

/// Parses and validates a configuration; absent fields take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::Config(format!(
            "at `{}` (line {}, column {}): {}",
            e.path(),
            inner.line(),
            inner.column(),
            inner
        ))
    })?;
    cfg.validate()?;
    Ok(cfg)
}
