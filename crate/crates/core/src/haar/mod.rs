//! Haar-feature cascade baseline: integral images, rectangle features,
//! AdaBoost stumps, an attentional cascade and a sliding-window detector.

mod adaboost;
mod cascade;
mod features;
mod integral;

use thiserror::Error;

pub use adaboost::{stump_alpha, strong_error, train_adaboost, AdaBoostOutcome, Booster, FeatureMatrix, Round, Stump, ERROR_FLOOR};
pub use cascade::{
    build_cascade, detect_haar, detect_haar_counted, haar_positives, CascadeTrainConfig, CascadeTraining, EvalCounters,
    HaarCascadeModel, HaarStage, NegativeSource, PoolNegatives, ScanConfig, SceneNegatives, StageReport,
};
pub use features::{feature_pool, feature_value, inverse_sigma, window_side, FeatureKind, HaarFeature, ScaledFeature, WINDOW};
pub use integral::{integral, IntegralImage};

#[derive(Debug, Error)]
pub enum HaarError {
    #[error("invalid cascade model: {0}")]
    Model(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("stage {stage} cannot meet its targets: detection rate {detection_rate}, false-positive rate {false_positive_rate}")]
    TargetUnreachable {
        stage: usize,
        detection_rate: f32,
        false_positive_rate: f32,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn save_model(model: &HaarCascadeModel, path: impl AsRef<std::path::Path>) -> Result<(), HaarError> {
    std::fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<HaarCascadeModel, HaarError> {
    HaarCascadeModel::from_text(&std::fs::read_to_string(path)?)
}
