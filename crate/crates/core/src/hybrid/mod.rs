//! CNN-DNN and CNN-QNN models, the classical-to-quantum transfer step, the
//! training regimes and evaluation.

mod container;
mod model;
mod train;

pub use container::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION};
pub use model::{
    batch_ce, build_model, transfer_cnn, GradMethod, Gradients, Head, HybridConfig, HybridModel, ModelKind,
    NamedTensor, QnnHead, Trainable,
};
pub use train::{
    evaluate, prepare_model, train, EpochRecord, EvalReport, TrainOptions, TrainOutcome, TrainRegime, Trainer,
};
