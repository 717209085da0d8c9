use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Floating-point scalar for the numeric core: `f32` or `f64`.
///
/// All tensor, model, and metric math is generic over this trait; the
/// crate root exports `f64`-concrete aliases which the simulator pipeline
/// uses throughout.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Send + Sync + Debug + Display + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn from_f64_c(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
