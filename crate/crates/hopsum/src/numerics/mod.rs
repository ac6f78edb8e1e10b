//! Differentiable computation substrate: dense real tensors, a reverse-mode
//! tape over a dynamic graph, recurrent cells, named parameter storage with
//! adaptive-gradient updates, and a finite-difference gradient checker.
//!
//! Values are `f32` by default; every structure is generic over [`Scalar`] so
//! the same graphs can be re-run in `f64` when verifying gradients.

mod gradcheck;
mod lstm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{bilstm, lstm_step, BiLstmOut, LstmVars};
pub use optim::{adagrad_step, clip_gradients, collect_grads, global_norm, GradMap};
pub use params::ParamStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Floating-point element type for all tensors.
///
/// Implemented for `f32` (training default) and `f64` (gradient checks).
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    /// Type tag stored in checkpoint headers.
    fn dtype_tag() -> u8;
    /// Exact bit pattern, widened to 64 bits for serialization.
    fn to_bits_u64(self) -> u64;
    /// Inverse of [`Scalar::to_bits_u64`].
    fn from_bits_u64(bits: u64) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $tag:expr, $to_bits:expr, $from_bits:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            fn dtype_tag() -> u8 {
                $tag
            }
            #[inline]
            fn to_bits_u64(self) -> u64 {
                $to_bits(self)
            }
            #[inline]
            fn from_bits_u64(bits: u64) -> Self {
                $from_bits(bits)
            }
        }
    };
}

impl_scalar!(f32, 4, |x: f32| x.to_bits() as u64, |b: u64| f32::from_bits(b as u32));
impl_scalar!(f64, 8, |x: f64| x.to_bits(), f64::from_bits);

/// Shorthand for converting literals into the active scalar type.
#[inline]
pub fn fl<F: Scalar>(x: f64) -> F {
    F::from_f64(x)
}
