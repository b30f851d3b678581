//! Scalar abstraction shared by every numeric kernel.
//!
//! All assembly arithmetic is written against [`Real`], so the same stage
//! code runs in `f64` (the production path), `f32`, and [`Counted`], an
//! `f64` wrapper that tallies floating-point operations for FLOP accounting.

use std::cell::Cell;
use std::fmt;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

/// Floating-point scalar usable by the assembly kernels.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    /// Widening conversion used for I/O and comparisons.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}
impl Real for Counted {}

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
fn tick() {
    FLOPS.with(|c| c.set(c.get() + 1));
}

/// Resets the calling thread's FLOP counter and returns the previous value.
pub fn take_flops() -> u64 {
    FLOPS.with(|c| c.replace(0))
}

/// Current value of the calling thread's FLOP counter.
pub fn flops() -> u64 {
    FLOPS.with(|c| c.get())
}

/// `f64` that counts `+ - * /`, `sqrt` and `cbrt` as one FLOP each.
///
/// The counter is thread-local; run the instrumented code on one thread and
/// read it back with [`take_flops`].
#[derive(Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

impl fmt::Debug for Counted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl fmt::Display for Counted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

macro_rules! counted_binop {
    ($tr:ident, $m:ident, $atr:ident, $am:ident, $op:tt) => {
        impl $tr for Counted {
            type Output = Counted;
            #[inline]
            fn $m(self, rhs: Counted) -> Counted {
                tick();
                Counted(self.0 $op rhs.0)
            }
        }
        impl $atr for Counted {
            #[inline]
            fn $am(&mut self, rhs: Counted) {
                tick();
                self.0 = self.0 $op rhs.0;
            }
        }
    };
}

counted_binop!(Add, add, AddAssign, add_assign, +);
counted_binop!(Sub, sub, SubAssign, sub_assign, -);
counted_binop!(Mul, mul, MulAssign, mul_assign, *);
counted_binop!(Div, div, DivAssign, div_assign, /);

impl Rem for Counted {
    type Output = Counted;
    fn rem(self, rhs: Counted) -> Counted {
        Counted(self.0 % rhs.0)
    }
}

impl Neg for Counted {
    type Output = Counted;
    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Zero for Counted {
    fn zero() -> Self {
        Counted(0.0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

impl One for Counted {
    fn one() -> Self {
        Counted(1.0)
    }
}

impl Num for Counted {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Counted)
    }
}

impl ToPrimitive for Counted {
    fn to_i64(&self) -> Option<i64> {
        self.0.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.0)
    }
}

impl NumCast for Counted {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Counted)
    }
}

impl FromPrimitive for Counted {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Counted(n as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Counted(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Counted(n))
    }
}

macro_rules! passthrough_unary {
    ($($m:ident),*) => {
        $(
            #[inline]
            fn $m(self) -> Self {
                Counted(self.0.$m())
            }
        )*
    };
}

macro_rules! passthrough_const {
    ($($m:ident),*) => {
        $(
            #[inline]
            fn $m() -> Self {
                Counted(f64::$m())
            }
        )*
    };
}

impl Float for Counted {
    passthrough_const!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value);
    passthrough_unary!(
        floor, ceil, round, trunc, fract, abs, signum, exp, exp2, ln, log2, log10, sin, cos, tan,
        asin, acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh
    );

    fn is_nan(self) -> bool {
        self.0.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.0.is_finite()
    }
    fn is_normal(self) -> bool {
        self.0.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.0.classify()
    }
    fn is_sign_positive(self) -> bool {
        self.0.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.0.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        tick();
        tick();
        Counted(self.0.mul_add(a.0, b.0))
    }
    fn recip(self) -> Self {
        tick();
        Counted(self.0.recip())
    }
    fn powi(self, n: i32) -> Self {
        Counted(self.0.powi(n))
    }
    fn powf(self, n: Self) -> Self {
        Counted(self.0.powf(n.0))
    }
    fn sqrt(self) -> Self {
        tick();
        Counted(self.0.sqrt())
    }
    fn cbrt(self) -> Self {
        tick();
        Counted(self.0.cbrt())
    }
    fn log(self, base: Self) -> Self {
        Counted(self.0.log(base.0))
    }
    fn max(self, other: Self) -> Self {
        Counted(self.0.max(other.0))
    }
    fn min(self, other: Self) -> Self {
        Counted(self.0.min(other.0))
    }
    #[allow(deprecated)]
    fn abs_sub(self, other: Self) -> Self {
        Counted((self.0 - other.0).max(0.0))
    }
    fn hypot(self, other: Self) -> Self {
        Counted(self.0.hypot(other.0))
    }
    fn atan2(self, other: Self) -> Self {
        Counted(self.0.atan2(other.0))
    }
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.0.sin_cos();
        (Counted(s), Counted(c))
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        Float::integer_decode(self.0)
    }
}
