//! Differentiable primitives with explicit forward/backward passes, the
//! pinball loss, an adaptive-moment optimizer, and a finite-difference
//! gradient checker. The temporal fusion transformer is assembled from
//! these parts.

pub mod attention;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod params;
pub mod selfcheck;

pub use attention::{AttnWeights, InterpretableMultiHeadAttention};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{
    concat_cols, dropout_backward, dropout_forward, elu_backward, elu_forward, glu_backward,
    glu_forward, sigmoid, softmax_backward, softmax_forward, softmax_masked, split_cols, Dense,
    Embedding, LayerNorm, LstmCell,
};
pub use loss::{pinball_loss, quantile_loss_value};
pub use params::{ParamId, ParamStore};
