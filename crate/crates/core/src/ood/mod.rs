//! Out-of-distribution baselines: per-phoneme kNN distance and one-class SVM.

pub mod knn;
pub mod ocsvm;

pub use knn::{build_knn_indexes, knn_score_all, KnnIndex};
pub use ocsvm::{
    fit_global_ocsvm, fit_ocsvm, fit_per_phoneme_ocsvm, ocsvm_score_all, GammaMode, OcsvmConfig,
    OcsvmFit, OcsvmModels, OneClassSvmModel, SvmScope,
};
