//! Differentiable primitives the model is assembled from.
//!
//! A small tape-based reverse-mode engine: [`Tape`] records every operation,
//! [`Var`] is a handle into the tape, and [`Tape::backward`] walks the tape
//! in reverse to accumulate gradients. The engine is generic over the scalar
//! type so the model trains in `f32` while gradient checks run in `f64`.

mod attention;
mod blocks;
mod conv;
mod gradcheck;
mod losses;
mod ops;
mod params;
mod real;
mod sample;
mod tape;

pub use attention::{
    AttentionConfig, DeformableAttention, DeformableSamples, MultiHeadAttention, SamplePoint,
};
pub use blocks::{ConvLayer, FeedForward, LayerNorm, Linear, Mlp};
pub use conv::conv2d;
pub use gradcheck::{
    finite_difference_gradcheck, finite_difference_gradcheck_sampled, GradCheckReport,
};
pub use losses::{
    focal_loss, focal_loss_vec, giou_loss_var, l1_loss_var, softmax_normalize,
};
pub use ops::{concat_cols, concat_rows, stack_rows};
pub use params::{ParamStore, Session};
pub use real::Real;
pub use sample::{bilinear_sample, bilinear_sample_many};
pub use tape::{Gradients, Tape, Var};
