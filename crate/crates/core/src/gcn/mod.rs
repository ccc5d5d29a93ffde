//! Student classifier: two sum-aggregation graph convolutions, mean
//! readout, a fully connected layer with bias and softmax. Gradients are
//! derived by hand; training uses mean cross-entropy and Adam.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{
    class_mapping, load_model, save_model, Checkpoint, ClassMapping, CHECKPOINT_FORMAT_VERSION,
};
pub use model::{
    aggregate, conv_layer, ForwardTrace, GcnGradients, GcnModel, GraphInput, ModelDims, ModelTags,
};
pub use train::{train, train_inputs, TrainConfig, TrainOutcome};
