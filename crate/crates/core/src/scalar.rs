use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point type measurements are decoded into: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}
