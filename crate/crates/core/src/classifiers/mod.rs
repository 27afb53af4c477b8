//! The dual-encoder fusion classifier, its training loop and checkpoints,
//! and the classical baselines over cached encoder features.

mod baselines;
mod checkpoint;
mod fusion;
mod train;

pub use baselines::{
    fit_baseline, BaselineConfig, BaselineKind, DecisionTree, FittedBaseline, GaussianNb,
    NearestNeighbor, Pca, SvmClassifier,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use fusion::{
    EncoderFreeze, FusionKind, FusionModel, FusionModelConfig, Head, HeadKind,
};
pub use train::{
    carve_validation, train, Dataset, EpochRecord, TrainConfig, TrainHistory,
};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input shape: {0}")]
    Shape(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("label index {0} out of range")]
    BadLabel(usize),
    #[error("pca_components {components} must be below the feature width {width} and at most the sample count {samples}")]
    PcaWidth {
        components: usize,
        width: usize,
        samples: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}
