use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type the engine runs on. Training and inference use `f32`;
/// gradient checks use `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// Shorthand for converting an `f64` literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("literal conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}
