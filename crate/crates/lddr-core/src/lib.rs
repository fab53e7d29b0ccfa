//! Cascaded facial landmark alignment over locally extracted convolutional
//! descriptors.
//!
//! The pipeline: crop a face into a fixed canonical frame, pull a square
//! patch around each current landmark estimate, run a small convolutional
//! descriptor network on every patch, concatenate the descriptors, and apply
//! a learned linear update to the shape. Repeat with shrinking patch sizes.
//!
//! Modules:
//! - [`tensor`]: dense image/feature tensors and the conv, pooling, and
//!   normalization primitives.
//! - [`net`]: descriptor network definition, per-stage stride variants,
//!   geometry and receptive-field calculators, weight storage.
//! - [`shape`]: shape containers, canonical-frame mapping, patch extraction,
//!   flip/rotation augmentation.
//! - [`cascade`]: ridge training of the per-stage linear regressors and the
//!   iterative predictor, plus model serialization.
//! - [`metrics`]: normalized mean error protocols and cumulative error
//!   curves.
//! - [`data`]: landmark/image file formats, dataset manifests, and a
//!   deterministic synthetic face generator.

pub mod cascade;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod shape;
pub mod tensor;

pub use cascade::{
    choose_lambda_cv, load_model, predict, save_model, train_cascade, train_stage,
    verify_model_engine, CascadeModel, LambdaChoice, StageRegressor, TrainConfig, TrainReport,
    TrainSample,
};
pub use error::{Error, Result};
pub use metrics::{ced_curve, evaluate_set, nme, NmeProtocol, NmeResult};
pub use net::{
    init_random_weights, load_weights, save_weights, standard_stage_config, ChannelPlan,
    Descriptor, Engine, StageConfig, WeightSet, DESCRIPTOR_LEN, STAGE_INPUT_SIZES, STAGE_STRIDES,
};
pub use shape::{FaceFrame, PatchSchedule, Shape, CANONICAL_SIZE};
pub use tensor::{ConvWeights, Tensor};
