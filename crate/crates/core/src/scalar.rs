use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}
