//! Optimizer, two-phase training, evaluation and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod evaluate;
pub mod gradcheck;
pub mod trainer;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, peek_precision, save_checkpoint};
pub use gradcheck::{check_model_gradients, Fault};
pub use evaluate::{evaluate, predict, EvalReport, Prediction};
pub use trainer::{
    apply_trainable, examples_from_samples, format_metrics, representations, EpochRecord, Example, Session,
    TrainConfig, TrainPhase, TrainState, DESK_IMAGE_LR, DESK_LR, METRICS_HEADER,
};
