//! Per-phoneme Gaussian mixture pronunciation scoring, the competing
//! classifier and out-of-distribution baselines, rank-correlation
//! evaluation, allophony analysis and attention pooling.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::op_ref)]

pub mod allophony;
pub mod artifact;
pub mod attention;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod kmeans;
pub mod linalg;
pub mod ood;
pub mod optim;
pub mod softrank;
pub mod synth;

pub use allophony::{anmi, AnmiConfig, AnmiReport, AnmiScope, ClusterAssignment, EnvironmentLabel};
pub use attention::{train_attention, AttentionConfig, AttentionModule, AttentionReport};
pub use classifier::{GopMethod, LinearClassifier};
pub use error::{Error, ErrorClass, Result};
pub use eval::{kendall_tau, pool_utterance, EvalLevel, EvalReport, ScoreEntry, ScoreTable};
pub use features::{
    load_feature_set, write_feature_set, FeatureSet, InventoryEntry, NaturalClassTable,
    PhonemeInventory, SegmentRecord, Split,
};
pub use gmm::{CovarianceMode, GmmModel, GmmTrainConfig};
pub use ood::{GammaMode, KnnIndex, OcsvmConfig, OneClassSvmModel, SvmScope};
pub use optim::AdamConfig;
pub use softrank::{soft_rank, SoftRankConfig};
