use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by every scoring formula in the crate.
///
/// Graph statistics (degrees, relation frequencies) are stored as integers;
/// hub penalties, IDF values, rewards and policy logits are evaluated in `T`.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable in every float type")
    }

    fn of_f64(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal is representable")
    }

    fn half() -> Self {
        Self::of_f64(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
