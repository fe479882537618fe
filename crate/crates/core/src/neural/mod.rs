//! Dense, 1-D convolution and average-pool layers with hand-written
//! gradients, assembled into the CNN and dense regressors.

mod gradcheck;
mod layers;
mod network;
mod train;

pub use gradcheck::{finite_difference_check, GradCheck};
pub use layers::{
    avgpool1d_backward, avgpool1d_forward, conv1d_backward, conv1d_forward, dense_backward,
    dense_forward, valid_length, ConvShape, Layer, LayerSpec, Shape, Stack, Trace,
};
pub use network::{
    build_network, CnnArchitecture, DenseArchitecture, Grads, NetTrace, Network, NetworkSpec,
    STATIC_INPUTS, WEATHER_CHANNELS,
};
pub use train::{train_network, EpochRecord, TrainConfig, TrainedNetwork};
