//! Run configuration: a JSON file with command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixgop_core::allophony::AnmiConfig;
use mixgop_core::attention::AttentionConfig;
use mixgop_core::classifier::GopMethod;
use mixgop_core::eval::EvalLevel;
use mixgop_core::gmm::GmmTrainConfig;
use mixgop_core::ood::OcsvmConfig;
use mixgop_core::AdamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GmmGop,
    NnGop,
    DnnGop,
    MaxlogitGop,
    Knn,
    Osvm,
    POsvm,
    Mixgop,
    MixgopAttn,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::GmmGop,
        Method::NnGop,
        Method::DnnGop,
        Method::MaxlogitGop,
        Method::Knn,
        Method::Osvm,
        Method::POsvm,
        Method::Mixgop,
        Method::MixgopAttn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::GmmGop => "gmm_gop",
            Method::NnGop => "nn_gop",
            Method::DnnGop => "dnn_gop",
            Method::MaxlogitGop => "maxlogit_gop",
            Method::Knn => "knn",
            Method::Osvm => "osvm",
            Method::POsvm => "p_osvm",
            Method::Mixgop => "mixgop",
            Method::MixgopAttn => "mixgop_attn",
        }
    }

    /// Classifier formulation, for the four logit-based methods.
    pub fn gop_method(self) -> Option<GopMethod> {
        match self {
            Method::GmmGop => Some(GopMethod::GmmGop),
            Method::NnGop => Some(GopMethod::NnGop),
            Method::DnnGop => Some(GopMethod::DnnGop),
            Method::MaxlogitGop => Some(GopMethod::MaxLogitGop),
            _ => None,
        }
    }

    /// Directory under `models/` holding the artifacts this method reads.
    /// Methods sharing a trained model share a directory.
    pub fn model_family(self) -> &'static str {
        match self {
            Method::GmmGop | Method::NnGop | Method::DnnGop | Method::MaxlogitGop => "classifier",
            Method::Knn => "knn",
            Method::Osvm => "osvm",
            Method::POsvm => "p_osvm",
            Method::Mixgop | Method::MixgopAttn => "gmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.tag()).collect();
                format!("unknown method {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// A subsampling cap; `None` keeps every training row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cap(pub Option<usize>);

impl fmt::Display for Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("full"),
        }
    }
}

impl FromStr for Cap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(Cap(None));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Cap(Some(n))),
            _ => Err(format!("cap must be a positive integer or \"full\", got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub caps: Vec<Cap>,
    pub components: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            caps: vec![Cap(Some(64)), Cap(Some(128)), Cap(Some(256)), Cap(Some(512)), Cap(None)],
            components: vec![4, 8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Further manifests (typically other encoder layers) for `analyze`.
    pub layer_manifests: Vec<PathBuf>,
    pub method: Method,
    /// When set, the manifest must carry this layer index.
    pub layer_index: Option<u32>,
    pub level: EvalLevel,
    pub gmm: GmmTrainConfig,
    pub classifier: AdamConfig,
    pub ocsvm: OcsvmConfig,
    pub attention: AttentionConfig,
    /// Extra soft-rank strengths tried by `analyze` besides the one in
    /// `attention`.
    pub soft_rank_sweep: Vec<f64>,
    pub anmi: AnmiConfig,
    pub subsample_cap: Cap,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ablation: AblationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            layer_manifests: Vec::new(),
            method: Method::Mixgop,
            layer_index: None,
            level: EvalLevel::Utterance,
            gmm: GmmTrainConfig::default(),
            classifier: AdamConfig::default(),
            ocsvm: OcsvmConfig::default(),
            attention: AttentionConfig::default(),
            soft_rank_sweep: Vec::new(),
            anmi: AnmiConfig::default(),
            subsample_cap: Cap(Some(512)),
            seed: 0,
            output_dir: PathBuf::from("mixgop-out"),
            ablation: AblationGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Copies the run seed into every component that takes one.
    pub fn propagate_seed(&mut self) {
        self.gmm.kmeans_seed = self.seed;
        self.attention.seed = self.seed;
        self.anmi.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.manifest.as_os_str().is_empty() {
            return Err(CliError::Usage("no manifest given (use --manifest or a config file)".into()));
        }
        for path in std::iter::once(&self.manifest).chain(&self.layer_manifests) {
            if !path.exists() {
                return Err(CliError::MissingFile(path.clone()));
            }
        }
        self.gmm.validate()?;
        self.classifier.validate()?;
        self.attention.adam.validate()?;
        self.attention.soft_rank.validate()?;
        if self.soft_rank_sweep.iter().any(|&e| e.is_nan() || e <= 0.0) {
            return Err(CliError::Usage("soft-rank strengths must be positive".into()));
        }
        if self.ablation.components.contains(&0) {
            return Err(CliError::Usage("ablation component counts must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the effective configuration. The
    /// output directory is left out: it says where results go, not what
    /// they are.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&hashed).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
