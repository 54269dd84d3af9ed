//! Scalar element types the engine runs on.
//!
//! Training uses `f32`; gradient-check and oracle paths use `f64`, where
//! central finite differences are actually meaningful.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::thread::LocalKey;

use crate::tensor::tape::GradTape;

/// Element dtype tag, used by the checkpoint directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element of a [`crate::tensor::Tensor`].
pub trait Element:
    Copy
    + PartialOrd
    + Default
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;

    fn write_le_bytes(data: &[Self], out: &mut Vec<u8>);
    fn read_le_bytes(bytes: &[u8]) -> Option<Vec<Self>>;

    /// Thread-local slot holding this dtype's active gradient tape.
    fn tape_slot() -> &'static LocalKey<RefCell<Option<GradTape<Self>>>>
    where
        Self: Sized;
}

macro_rules! impl_element {
    ($ty:ty, $dtype:expr, $slot:ident) => {
        impl Element for $ty {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const DTYPE: Dtype = $dtype;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                if other > self {
                    other
                } else {
                    self
                }
            }

            fn write_le_bytes(data: &[Self], out: &mut Vec<u8>) {
                out.reserve(data.len() * std::mem::size_of::<$ty>());
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }

            fn read_le_bytes(bytes: &[u8]) -> Option<Vec<Self>> {
                const W: usize = std::mem::size_of::<$ty>();
                if bytes.len() % W != 0 {
                    return None;
                }
                Some(
                    bytes
                        .chunks_exact(W)
                        .map(|c| <$ty>::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }

            fn tape_slot() -> &'static LocalKey<RefCell<Option<GradTape<Self>>>> {
                thread_local! {
                    static $slot: RefCell<Option<GradTape<$ty>>> = const { RefCell::new(None) };
                }
                &$slot
            }
        }
    };
}

impl_element!(f32, Dtype::F32, TAPE_F32);
impl_element!(f64, Dtype::F64, TAPE_F64);
