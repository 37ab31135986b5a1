//! Scalar abstraction over the two supported precisions. A whole run is
//! monomorphized over one `Scalar` type; precision is never mixed inside a
//! tape or kernel.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::str::FromStr;

/// Branch-free tanh via `tanh(x) = sign(x)·(−em)/(2 + em)` with
/// `em = e^(−2|x|) − 1`, where the exponential-minus-one uses Cody-Waite
/// range reduction and a degree-13 Taylor polynomial, assembled as
/// `em = (2^n − 1) + 2^n·(e^r − 1)` so small arguments lose no precision.
/// Agrees with libm tanh to a few ulp but, unlike a libm call, vectorizes
/// inside elementwise loops. Large arguments saturate to exactly ±1.
/// NaN maps to ±1 rather than propagating; tensor entry points reject
/// non-finite values before any kernel runs.
#[inline(always)]
pub fn fast_tanh(x: f64) -> f64 {
    const LOG2_E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931471803691238e-1;
    const LN2_LO: f64 = 1.9082149292705877e-10;
    // Below e^(−40) the quotient rounds to exactly 1.0.
    let y = (-2.0 * x.abs()).max(-40.0);
    let nf = (y * LOG2_E).round();
    let r = y - nf * LN2_HI - nf * LN2_LO;
    // (e^r − 1)/r for |r| <= ln2/2, reciprocal-factorial Taylor terms.
    let p = 1.6059043836821613e-10;
    let p = p * r + 2.08767569878681e-9;
    let p = p * r + 2.505210838544172e-8;
    let p = p * r + 2.755731922398589e-7;
    let p = p * r + 2.755731922398589e-6;
    let p = p * r + 2.4801587301587302e-5;
    let p = p * r + 1.984126984126984e-4;
    let p = p * r + 1.3888888888888889e-3;
    let p = p * r + 8.333333333333333e-3;
    let p = p * r + 4.1666666666666664e-2;
    let p = p * r + 1.6666666666666666e-1;
    let p = p * r + 5e-1;
    let p = p * r + 1.0;
    let s = f64::from_bits(((1023 + nf as i64) as u64) << 52);
    let em = (s - 1.0) + s * (p * r);
    ((-em) / (2.0 + em)).copysign(x)
}

/// Run-level precision selector, fixed at startup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision '{other}' (expected f32 or f64)")),
        }
    }
}

/// Element type of all tensors: f32 or f64.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// c = a · b for row-major a [m,k], b [k,n], c [m,n].
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
    /// c = a · bᵀ for row-major a [m,k], b [n,k], c [m,n].
    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
    /// c = aᵀ · b for row-major a [k,m], b [k,n], c [m,n].
    fn gemm_tn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]);
}

#[inline(always)]
fn tanh_f64(x: f64) -> f64 {
    fast_tanh(x)
}

#[inline(always)]
fn tanh_f32(x: f32) -> f32 {
    fast_tanh(x as f64) as f32
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $gemm:path, $tanh:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const PRECISION: Precision = $prec;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline(always)]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                $tanh(self)
            }
            #[inline(always)]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || k == 0 || n == 0 {
                    c.fill(0.0);
                    return;
                }
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), m * k);
                debug_assert_eq!(b.len(), n * k);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || k == 0 || n == 0 {
                    c.fill(0.0);
                    return;
                }
                // bᵀ as a [k,n] operand of row-major b [n,k]: strides swap.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        1,
                        k as isize,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn gemm_tn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
                debug_assert_eq!(a.len(), k * m);
                debug_assert_eq!(b.len(), k * n);
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || k == 0 || n == 0 {
                    c.fill(0.0);
                    return;
                }
                // aᵀ as an [m,k] operand of row-major a [k,m]: strides swap.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        1,
                        m as isize,
                        b.as_ptr(),
                        n as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, Precision::F32, matrixmultiply::sgemm, tanh_f32);
impl_scalar!(f64, Precision::F64, matrixmultiply::dgemm, tanh_f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_libm_to_a_few_ulp() {
        let mut worst = 0.0f64;
        let mut x = 1e-300;
        while x < 25.0 {
            for s in [x, -x] {
                let want = s.tanh();
                let rel = (fast_tanh(s) - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(rel);
            }
            x *= 1.05;
        }
        assert!(worst < 4e-15, "worst rel err {worst:e}");
    }

    #[test]
    fn fast_tanh_saturation_sign_and_zero() {
        assert_eq!(fast_tanh(19.0), 1.0);
        assert_eq!(fast_tanh(-19.0), -1.0);
        assert_eq!(fast_tanh(f64::INFINITY), 1.0);
        assert_eq!(fast_tanh(0.0).to_bits(), 0.0f64.to_bits());
        assert_eq!(fast_tanh(-0.0).to_bits(), (-0.0f64).to_bits());
        assert_eq!(fast_tanh(-0.37), -fast_tanh(0.37));
    }

    #[test]
    fn strided_gemm_variants_match_plain_gemm() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 0.5).collect();
        let b: Vec<f64> = (0..6).map(|i| (i as f64).cos()).collect();
        // a [2,3] · b [3,2] two ways: through bᵀ [2,3] and through aᵀ [3,2].
        let mut want = vec![0.0; 4];
        f64::gemm(2, 3, 2, &a, &b, &mut want);
        let bt = vec![b[0], b[2], b[4], b[1], b[3], b[5]];
        let mut c = vec![0.0; 4];
        f64::gemm_nt(2, 3, 2, &a, &bt, &mut c);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
        let at = vec![a[0], a[3], a[1], a[4], a[2], a[5]];
        f64::gemm_tn(2, 3, 2, &at, &b, &mut c);
        for (g, w) in c.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }
}
