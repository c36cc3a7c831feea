//! Dense `f64` tensors and the forward blocks the fusion graphs are built
//! from. Feature maps are `[C, H, W]`, token and query matrices `[L, d]`.
//! Every spatial operator pads by reflection.

mod aspp;
mod attention;
mod container;
mod finite_diff;
mod layers;
mod tensor;

use thiserror::Error;

pub use aspp::{aspp, AsppParams, AtrousBranch, DEFAULT_RATES};
pub use attention::{
    channel_attention, channel_gate, mha, mha_map, spatial_attention, spatial_gate,
    ChannelAttentionParams, MhaParams, SpatialAttentionParams, CHANNEL_REDUCTION, DEFAULT_HEADS,
    SPATIAL_KERNEL,
};
pub use container::{NamedArrays, ParamSet};
pub use finite_diff::{finite_diff, richardson, Richardson};
pub use layers::{conv2d, relu, sigmoid, silu, softmax, ConvParams, LinearParams};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("container error: {0}")]
    Container(String),
}
