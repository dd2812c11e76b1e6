//! Layers with hand-written backward passes over a flat parameter buffer.

pub mod attention;
pub mod conv;
pub mod layers;
pub mod params;

pub use attention::{MhaCache, MultiHeadAttention};
pub use conv::{avg_pool2, avg_pool2_backward, Conv2d, ConvCache};
pub use layers::{relu, relu_backward, softmax_rows, LayerNorm, LayerNormCache, Linear};
pub use params::{Grads, Init, ParamBuilder, ParamHandle, ParamRole, ParamSet, ParamSpec};
