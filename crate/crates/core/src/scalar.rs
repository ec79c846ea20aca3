//! Element types: single/double real and complex.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex;
use num_traits::{Float, One, Zero};

pub type Complex32 = Complex<f32>;
pub type Complex64 = Complex<f64>;

/// Runtime tag of an element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    F32,
    F64,
    C32,
    C64,
}

impl ValueType {
    pub const fn bytes(self) -> usize {
        match self {
            ValueType::F32 => 4,
            ValueType::F64 => 8,
            ValueType::C32 => 8,
            ValueType::C64 => 16,
        }
    }

    pub const fn is_complex(self) -> bool {
        matches!(self, ValueType::C32 | ValueType::C64)
    }

    pub const fn is_single(self) -> bool {
        matches!(self, ValueType::F32 | ValueType::C32)
    }

    /// Flops of one multiply-add: 2 for real, 8 for complex (4 mul + 4 add).
    pub const fn flops_per_fma(self) -> usize {
        if self.is_complex() {
            8
        } else {
            2
        }
    }
}

/// Real component type of a [`Scalar`].
pub trait Real: Scalar<Real = Self> + Float + PartialOrd {
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

/// Element type of all kernels.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + Default
    + PartialEq
    + Zero
    + One
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
    type Real: Real;
    /// Compensated accumulator of `conj(a) * b` products.
    type Acc: CompensatedAcc<Self>;

    const VALUE_TYPE: ValueType;
    const BYTES: usize = Self::VALUE_TYPE.bytes();

    fn conj(self) -> Self;
    /// Modulus, widened to f64.
    fn modulus(self) -> f64;
    fn from_f64(v: f64) -> Self;
    /// Builds a value from real and imaginary parts; `im` is dropped for real types.
    fn from_parts(re: f64, im: f64) -> Self;
    fn re(self) -> Self::Real;
    fn im(self) -> Self::Real;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads from the first `Self::BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

/// Kahan-Babuska (Neumaier) sum of a real sequence, with exact products via fma.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier<R> {
    sum: R,
    comp: R,
}

impl<R: Real> Neumaier<R> {
    #[inline]
    pub fn add(&mut self, v: R) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `a * b`; the rounding error of the product is carried in the
    /// compensation term.
    #[inline]
    pub fn add_prod(&mut self, a: R, b: R) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p);
        self.comp += e;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.comp += other.comp;
    }

    pub fn value(&self) -> R {
        self.sum + self.comp
    }
}

pub trait CompensatedAcc<S>: Copy + Default + Send + Sync + Debug {
    /// `self += conj(a) * b`
    fn add_conj_prod(&mut self, a: S, b: S);
    fn merge(&mut self, other: &Self);
    fn value(&self) -> S;
}

impl<R: Real> CompensatedAcc<R> for Neumaier<R> {
    #[inline]
    fn add_conj_prod(&mut self, a: R, b: R) {
        self.add_prod(a, b);
    }
    fn merge(&mut self, other: &Self) {
        Neumaier::merge(self, other);
    }
    fn value(&self) -> R {
        Neumaier::value(self)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ComplexNeumaier<R> {
    re: Neumaier<R>,
    im: Neumaier<R>,
}

impl<R: Real> CompensatedAcc<Complex<R>> for ComplexNeumaier<R>
where
    Complex<R>: Scalar,
{
    #[inline]
    fn add_conj_prod(&mut self, a: Complex<R>, b: Complex<R>) {
        // conj(a) * b = (ar br + ai bi) + i (ar bi - ai br)
        self.re.add_prod(a.re, b.re);
        self.re.add_prod(a.im, b.im);
        self.im.add_prod(a.re, b.im);
        self.im.add_prod(-a.im, b.re);
    }
    fn merge(&mut self, other: &Self) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }
    fn value(&self) -> Complex<R> {
        Complex::new(self.re.value(), self.im.value())
    }
}

macro_rules! real_scalar {
    ($t:ty, $vt:expr) => {
        impl Scalar for $t {
            type Real = $t;
            type Acc = Neumaier<$t>;
            const VALUE_TYPE: ValueType = $vt;

            #[inline]
            fn conj(self) -> Self {
                self
            }
            #[inline]
            fn modulus(self) -> f64 {
                (self as f64).abs()
            }
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn from_parts(re: f64, _im: f64) -> Self {
                re as $t
            }
            fn re(self) -> $t {
                self
            }
            fn im(self) -> $t {
                0.0
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                let mut b = [0u8; std::mem::size_of::<$t>()];
                b.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(b)
            }
        }
    };
}

real_scalar!(f32, ValueType::F32);
real_scalar!(f64, ValueType::F64);

macro_rules! complex_scalar {
    ($r:ty, $vt:expr) => {
        impl Scalar for Complex<$r> {
            type Real = $r;
            type Acc = ComplexNeumaier<$r>;
            const VALUE_TYPE: ValueType = $vt;

            #[inline]
            fn conj(self) -> Self {
                Complex::conj(&self)
            }
            #[inline]
            fn modulus(self) -> f64 {
                (self.re as f64).hypot(self.im as f64)
            }
            fn from_f64(v: f64) -> Self {
                Complex::new(v as $r, 0.0)
            }
            fn from_parts(re: f64, im: f64) -> Self {
                Complex::new(re as $r, im as $r)
            }
            fn re(self) -> $r {
                self.re
            }
            fn im(self) -> $r {
                self.im
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.re.to_le_bytes());
                out.extend_from_slice(&self.im.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                const N: usize = std::mem::size_of::<$r>();
                Complex::new(<$r as Scalar>::read_le(&bytes[..N]), <$r as Scalar>::read_le(&bytes[N..2 * N]))
            }
        }
    };
}

complex_scalar!(f32, ValueType::C32);
complex_scalar!(f64, ValueType::C64);
