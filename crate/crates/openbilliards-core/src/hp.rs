//! Arbitrary-precision scalars and the small amount of dense linear algebra
//! the rest of the crate needs.
//!
//! [`Hp`] wraps an MPFR float and carries its working precision with it;
//! mixed-precision arithmetic rounds to the larger of the two operand
//! precisions, so precision never silently degrades through a computation.
//! [`Rat`] wraps an exact rational and exists so the formal-series engine can
//! run the same generic code both exactly (identity checks) and numerically.

use std::cmp::Ordering;
use std::fmt;

use rug::float::Special;
use rug::ops::Pow;
use rug::{Float, Rational};

/// High-precision floating-point scalar.
///
/// The precision (in bits) is a property of each value. Binary operations
/// produce results at the maximum of the operand precisions.
#[derive(Clone, PartialEq)]
pub struct Hp(Float);

impl Hp {
    pub fn zero(prec: u32) -> Self {
        Hp(Float::with_val(prec, 0))
    }

    pub fn one(prec: u32) -> Self {
        Hp(Float::with_val(prec, 1))
    }

    pub fn from_f64(prec: u32, v: f64) -> Self {
        Hp(Float::with_val(prec, v))
    }

    pub fn from_i64(prec: u32, v: i64) -> Self {
        Hp(Float::with_val(prec, v))
    }

    /// Exact rational `num/den` rounded once to `prec` bits.
    pub fn ratio(prec: u32, num: i64, den: i64) -> Self {
        Hp(Float::with_val(prec, Rational::from((num, den))))
    }

    pub fn from_rational(prec: u32, r: &Rational) -> Self {
        Hp(Float::with_val(prec, r))
    }

    pub fn pi(prec: u32) -> Self {
        Hp(Float::with_val(prec, rug::float::Constant::Pi))
    }

    /// Parses a decimal (or binary-exponent) literal at the given precision.
    pub fn parse(prec: u32, s: &str) -> Option<Self> {
        Float::parse(s).ok().map(|p| Hp(Float::with_val(prec, p)))
    }

    /// Decimal string with enough digits to reproduce the value bit-exactly
    /// when parsed back at the same precision.
    pub fn to_decimal(&self) -> String {
        self.0.to_string_radix(10, None)
    }

    pub fn prec(&self) -> u32 {
        self.0.prec()
    }

    /// Re-rounds to a different working precision.
    pub fn with_prec(&self, prec: u32) -> Self {
        let mut f = self.0.clone();
        f.set_prec(prec);
        Hp(f)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_sign_negative(&self) -> bool {
        self.0.is_sign_negative()
    }

    pub fn abs(&self) -> Self {
        Hp(self.0.clone().abs())
    }

    pub fn sqrt(&self) -> Self {
        Hp(self.0.clone().sqrt())
    }

    pub fn square(&self) -> Self {
        Hp(self.0.clone().square())
    }

    pub fn recip(&self) -> Self {
        Hp(self.0.clone().recip())
    }

    pub fn ln(&self) -> Self {
        Hp(self.0.clone().ln())
    }

    pub fn log2(&self) -> Self {
        Hp(self.0.clone().log2())
    }

    pub fn exp(&self) -> Self {
        Hp(self.0.clone().exp())
    }

    pub fn sin(&self) -> Self {
        Hp(self.0.clone().sin())
    }

    pub fn cos(&self) -> Self {
        Hp(self.0.clone().cos())
    }

    pub fn tan(&self) -> Self {
        Hp(self.0.clone().tan())
    }

    pub fn asin(&self) -> Self {
        Hp(self.0.clone().asin())
    }

    pub fn acos(&self) -> Self {
        Hp(self.0.clone().acos())
    }

    pub fn atan(&self) -> Self {
        Hp(self.0.clone().atan())
    }

    /// Four-quadrant arctangent `atan2(self, x)`.
    pub fn atan2(&self, x: &Hp) -> Self {
        Hp(self.0.clone().atan2(&x.0))
    }

    pub fn cosh(&self) -> Self {
        Hp(self.0.clone().cosh())
    }

    pub fn sinh(&self) -> Self {
        Hp(self.0.clone().sinh())
    }

    pub fn acosh(&self) -> Self {
        Hp(self.0.clone().acosh())
    }

    pub fn floor(&self) -> Self {
        Hp(self.0.clone().floor())
    }

    pub fn powi(&self, e: i32) -> Self {
        Hp(self.0.clone().pow(e))
    }

    pub fn min(&self, other: &Hp) -> Self {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn max(&self, other: &Hp) -> Self {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn signum(&self) -> f64 {
        match self.0.cmp0() {
            Some(Ordering::Less) => -1.0,
            Some(Ordering::Greater) => 1.0,
            _ => 0.0,
        }
    }

    pub fn nan(prec: u32) -> Self {
        Hp(Float::with_val(prec, Special::Nan))
    }

    fn join_prec(&self, other: &Hp) -> u32 {
        self.0.prec().max(other.0.prec())
    }
}

impl fmt::Debug for Hp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.20e}", self.0)
    }
}

impl fmt::Display for Hp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(digits) = f.precision() {
            write!(f, "{:.*e}", digits, self.0)
        } else {
            write!(f, "{:.20e}", self.0)
        }
    }
}

impl PartialOrd for Hp {
    fn partial_cmp(&self, other: &Hp) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

macro_rules! hp_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl std::ops::$trait<&Hp> for &Hp {
            type Output = Hp;
            fn $method(self, rhs: &Hp) -> Hp {
                let prec = self.join_prec(rhs);
                Hp(Float::with_val(prec, &self.0 $op &rhs.0))
            }
        }
        impl std::ops::$trait<Hp> for Hp {
            type Output = Hp;
            fn $method(self, rhs: Hp) -> Hp {
                &self $op &rhs
            }
        }
        impl std::ops::$trait<&Hp> for Hp {
            type Output = Hp;
            fn $method(self, rhs: &Hp) -> Hp {
                &self $op rhs
            }
        }
        impl std::ops::$trait<Hp> for &Hp {
            type Output = Hp;
            fn $method(self, rhs: Hp) -> Hp {
                self $op &rhs
            }
        }
    };
}

hp_binop!(Add, add, +);
hp_binop!(Sub, sub, -);
hp_binop!(Mul, mul, *);
hp_binop!(Div, div, /);

impl std::ops::Neg for &Hp {
    type Output = Hp;
    fn neg(self) -> Hp {
        Hp(Float::with_val(self.0.prec(), -&self.0))
    }
}

impl std::ops::Neg for Hp {
    type Output = Hp;
    fn neg(self) -> Hp {
        -&self
    }
}

/// Exact rational scalar for the formal-series engine.
#[derive(Clone, PartialEq, Debug)]
pub struct Rat(pub Rational);

impl Rat {
    pub fn new(num: i64, den: i64) -> Self {
        Rat(Rational::from((num, den)))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The scalar operations shared by [`Hp`] and [`Rat`].
///
/// `Ctx` carries whatever is needed to mint constants: the precision for
/// floats, nothing for rationals.
pub trait Scalar: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {
    type Ctx: Copy + Send + Sync;

    fn ctx(&self) -> Self::Ctx;
    fn from_i64(ctx: Self::Ctx, v: i64) -> Self;
    /// Exact (or correctly rounded) `num/den`.
    fn ratio(ctx: Self::Ctx, num: i64, den: i64) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn is_zero(&self) -> bool;
    /// Rough magnitude, used only for pivoting and diagnostics.
    fn abs_f64(&self) -> f64;
}

impl Scalar for Hp {
    type Ctx = u32;

    fn ctx(&self) -> u32 {
        self.prec()
    }

    fn from_i64(ctx: u32, v: i64) -> Self {
        Hp::from_i64(ctx, v)
    }

    fn ratio(ctx: u32, num: i64, den: i64) -> Self {
        Hp::ratio(ctx, num, den)
    }

    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }

    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }

    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }

    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }

    fn neg(&self) -> Self {
        -self
    }

    fn is_zero(&self) -> bool {
        Hp::is_zero(self)
    }

    fn abs_f64(&self) -> f64 {
        self.to_f64().abs()
    }
}

impl Scalar for Rat {
    type Ctx = ();

    fn ctx(&self) {}

    fn from_i64(_: (), v: i64) -> Self {
        Rat(Rational::from(v))
    }

    fn ratio(_: (), num: i64, den: i64) -> Self {
        Rat::new(num, den)
    }

    fn add(&self, rhs: &Self) -> Self {
        Rat((&self.0 + &rhs.0).into())
    }

    fn sub(&self, rhs: &Self) -> Self {
        Rat((&self.0 - &rhs.0).into())
    }

    fn mul(&self, rhs: &Self) -> Self {
        Rat((&self.0 * &rhs.0).into())
    }

    fn div(&self, rhs: &Self) -> Self {
        Rat((&self.0 / &rhs.0).into())
    }

    fn neg(&self) -> Self {
        Rat((-&self.0).into())
    }

    fn is_zero(&self) -> bool {
        self.0.cmp0() == Ordering::Equal
    }

    fn abs_f64(&self) -> f64 {
        self.0.to_f64().abs()
    }
}

/// Dual number over any scalar: value plus one derivative slot, giving
/// forward-mode differentiation through generic code. `is_zero` requires
/// both parts to vanish so that sparsity shortcuts in series products never
/// drop a derivative term.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<S: Scalar> {
    pub v: S,
    pub d: S,
}

impl<S: Scalar> Dual<S> {
    pub fn constant(v: S) -> Self {
        let d = S::from_i64(v.ctx(), 0);
        Dual { v, d }
    }

    /// A value carrying derivative 1 — the differentiation variable.
    pub fn variable(v: S) -> Self {
        let d = S::from_i64(v.ctx(), 1);
        Dual { v, d }
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    type Ctx = S::Ctx;

    fn ctx(&self) -> S::Ctx {
        self.v.ctx()
    }

    fn from_i64(ctx: S::Ctx, v: i64) -> Self {
        Dual::constant(S::from_i64(ctx, v))
    }

    fn ratio(ctx: S::Ctx, num: i64, den: i64) -> Self {
        Dual::constant(S::ratio(ctx, num, den))
    }

    fn add(&self, rhs: &Self) -> Self {
        Dual {
            v: self.v.add(&rhs.v),
            d: self.d.add(&rhs.d),
        }
    }

    fn sub(&self, rhs: &Self) -> Self {
        Dual {
            v: self.v.sub(&rhs.v),
            d: self.d.sub(&rhs.d),
        }
    }

    fn mul(&self, rhs: &Self) -> Self {
        Dual {
            v: self.v.mul(&rhs.v),
            d: self.v.mul(&rhs.d).add(&self.d.mul(&rhs.v)),
        }
    }

    fn div(&self, rhs: &Self) -> Self {
        let v = self.v.div(&rhs.v);
        // (a/c)' = (a' - (a/c) c') / c.
        let d = self.d.sub(&v.mul(&rhs.d)).div(&rhs.v);
        Dual { v, d }
    }

    fn neg(&self) -> Self {
        Dual {
            v: self.v.neg(),
            d: self.d.neg(),
        }
    }

    fn is_zero(&self) -> bool {
        self.v.is_zero() && self.d.is_zero()
    }

    fn abs_f64(&self) -> f64 {
        self.v.abs_f64().max(self.d.abs_f64())
    }
}

/// 2×2 matrix over [`Hp`]; the workhorse for collision-map differentials and
/// monodromies.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat2 {
    pub a: Hp,
    pub b: Hp,
    pub c: Hp,
    pub d: Hp,
}

impl Mat2 {
    pub fn new(a: Hp, b: Hp, c: Hp, d: Hp) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity(prec: u32) -> Self {
        Mat2::new(Hp::one(prec), Hp::zero(prec), Hp::zero(prec), Hp::one(prec))
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        Mat2::new(
            &self.a * &rhs.a + &self.b * &rhs.c,
            &self.a * &rhs.b + &self.b * &rhs.d,
            &self.c * &rhs.a + &self.d * &rhs.c,
            &self.c * &rhs.b + &self.d * &rhs.d,
        )
    }

    pub fn det(&self) -> Hp {
        &self.a * &self.d - &self.b * &self.c
    }

    pub fn trace(&self) -> Hp {
        &self.a + &self.d
    }

    pub fn neg(&self) -> Mat2 {
        Mat2::new(-&self.a, -&self.b, -&self.c, -&self.d)
    }

    /// Inverse assuming determinant 1 is *not* guaranteed; divides by `det`.
    pub fn inv(&self) -> Mat2 {
        let det = self.det();
        Mat2::new(&self.d / &det, -&self.b / &det, -&self.c / &det, &self.a / &det)
    }

    pub fn apply(&self, x: &Hp, y: &Hp) -> (Hp, Hp) {
        (&self.a * x + &self.b * y, &self.c * x + &self.d * y)
    }

    /// Eigenvalue of smaller modulus, for a real hyperbolic matrix with
    /// `|trace| > 2` and determinant 1. Returned value lies in `(0, 1)`.
    pub fn contracting_eigenvalue(&self) -> Option<Hp> {
        let tr = self.trace().abs();
        let two = Hp::from_i64(tr.prec(), 2);
        if tr <= two {
            return None;
        }
        let disc = (tr.square() - Hp::from_i64(tr.prec(), 4)).sqrt();
        Some((&tr - &disc) / &two)
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Works over any [`Scalar`]; pivots are chosen by rough magnitude, which for
/// rationals degenerates to "any nonzero entry" — exactly what exact
/// arithmetic needs. Returns `None` when a pivot column is entirely zero.
pub fn solve_linear<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n) && b.len() == n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs_f64()
                .partial_cmp(&a[j][col].abs_f64())
                .unwrap_or(Ordering::Equal)
        })?;
        if a[pivot][col].is_zero() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].div(&a[col][col]);
            for k in col..n {
                a[row][k] = a[row][k].sub(&factor.mul(&a[col][k]));
            }
            b[row] = b[row].sub(&factor.mul(&b[col]));
        }
    }
    let ctx = b[0].ctx();
    let mut x = vec![T::from_i64(ctx, 0); n];
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for col in row + 1..n {
            acc = acc.sub(&a[row][col].mul(&x[col]));
        }
        x[row] = acc.div(&a[row][row]);
    }
    Some(x)
}

/// Least squares via modified Gram–Schmidt QR with column scaling.
///
/// Returns the coefficient vector and an estimate of the condition number of
/// the *scaled* design matrix (ratio of extreme `R` diagonal magnitudes).
pub fn least_squares(design: &[Vec<Hp>], rhs: &[Hp]) -> Option<(Vec<Hp>, f64)> {
    let m = design.len();
    if m == 0 {
        return None;
    }
    let n = design[0].len();
    if m < n {
        return None;
    }
    let prec = rhs[0].prec();

    // Scale each column to unit max-norm so the conditioning estimate reflects
    // basis collinearity rather than wildly different term magnitudes.
    let mut scale = vec![Hp::one(prec); n];
    for j in 0..n {
        let mut mx = Hp::zero(prec);
        for row in design {
            mx = mx.max(&row[j].abs());
        }
        if mx.is_zero() {
            return None;
        }
        scale[j] = mx;
    }
    let mut q: Vec<Vec<Hp>> = (0..n)
        .map(|j| design.iter().map(|row| &row[j] / &scale[j]).collect())
        .collect();
    let mut r = vec![vec![Hp::zero(prec); n]; n];

    let dot = |u: &[Hp], v: &[Hp]| -> Hp {
        let mut acc = Hp::zero(prec);
        for (a, b) in u.iter().zip(v) {
            acc = acc + a * b;
        }
        acc
    };

    for j in 0..n {
        for i in 0..j {
            let rij = dot(&q[i], &q[j]);
            for k in 0..m {
                let t = &q[i][k] * &rij;
                q[j][k] = &q[j][k] - &t;
            }
            r[i][j] = rij;
        }
        let norm = dot(&q[j], &q[j]).sqrt();
        if norm.is_zero() {
            return None;
        }
        for k in 0..m {
            q[j][k] = &q[j][k] / &norm;
        }
        r[j][j] = norm;
    }

    // x solves R x = Qᵀ rhs (then undo the column scaling).
    let qtb: Vec<Hp> = (0..n).map(|j| dot(&q[j], rhs)).collect();
    let mut x = vec![Hp::zero(prec); n];
    for row in (0..n).rev() {
        let mut acc = qtb[row].clone();
        for col in row + 1..n {
            acc = acc - &r[row][col] * &x[col];
        }
        x[row] = &acc / &r[row][row];
    }
    let mut dmax = f64::MIN;
    let mut dmin = f64::MAX;
    for j in 0..n {
        let d = r[j][j].abs().to_f64();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    for j in 0..n {
        x[j] = &x[j] / &scale[j];
    }
    Some((x, dmax / dmin))
}

/// Default working precision for a homoclinic-family run: enough bits that
/// terms of size `λ^(3·n_max·|σ|/2)` stay clear of rounding noise, with a 256-bit
/// floor for everything else.
pub fn default_precision(n_max: usize, period: usize, lambda: f64) -> u32 {
    let bits = 1.2 * (n_max as f64) * (period as f64) * lambda.log2().abs();
    (bits.ceil() as u32).max(256)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_precision_promotes() {
        let a = Hp::from_f64(128, 1.5);
        let b = Hp::ratio(256, 1, 3);
        let c = &a + &b;
        assert_eq!(c.prec(), 256);
    }

    #[test]
    fn decimal_round_trip_is_bit_exact() {
        let prec = 384;
        let x = Hp::ratio(prec, 1, 3).sqrt() + Hp::pi(prec);
        let s = x.to_decimal();
        let y = Hp::parse(prec, &s).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn transcendental_sanity() {
        // asin(1/2) = π/6 to working precision.
        let prec = 256;
        let lhs = Hp::ratio(prec, 1, 2).asin();
        let rhs = Hp::pi(prec) / Hp::from_i64(prec, 6);
        assert!((lhs - rhs).abs().to_f64() < 1e-70);
    }

    #[test]
    fn mat2_inverse_and_contraction() {
        let prec = 256;
        // [[49,40],[60,49]] has eigenvalues 49 ± 20√6; the smaller is (5−2√6)².
        let m = Mat2::new(
            Hp::from_i64(prec, 49),
            Hp::from_i64(prec, 40),
            Hp::from_i64(prec, 60),
            Hp::from_i64(prec, 49),
        );
        assert!((m.det() - Hp::one(prec)).abs().to_f64() < 1e-70);
        let lam = m.contracting_eigenvalue().unwrap();
        let six = Hp::from_i64(prec, 6);
        let expect = (Hp::from_i64(prec, 5) - Hp::from_i64(prec, 2) * six.sqrt()).square();
        assert!((lam - expect).abs().to_f64() < 1e-70);
        let inv = m.inv();
        let id = m.mul(&inv);
        assert!((id.a - Hp::one(prec)).abs().to_f64() < 1e-70);
        assert!(id.b.abs().to_f64() < 1e-70);
    }

    #[test]
    fn gaussian_solve_exact_rationals() {
        // 2x + y = 5, x − y = 1  ⟹  x = 2, y = 1.
        let a = vec![
            vec![Rat::new(2, 1), Rat::new(1, 1)],
            vec![Rat::new(1, 1), Rat::new(-1, 1)],
        ];
        let b = vec![Rat::new(5, 1), Rat::new(1, 1)];
        let x = solve_linear(a, b).unwrap();
        assert_eq!(x[0], Rat::new(2, 1));
        assert_eq!(x[1], Rat::new(1, 1));
    }

    #[test]
    fn least_squares_recovers_exact_model() {
        let prec = 256;
        // y = 3 + 2t over t = 0..6, fitted with basis {1, t}.
        let design: Vec<Vec<Hp>> = (0..6)
            .map(|t| vec![Hp::one(prec), Hp::from_i64(prec, t)])
            .collect();
        let rhs: Vec<Hp> = (0..6)
            .map(|t| Hp::from_i64(prec, 3 + 2 * t))
            .collect();
        let (x, cond) = least_squares(&design, &rhs).unwrap();
        assert!((x[0].to_f64() - 3.0).abs() < 1e-60);
        assert!((x[1].to_f64() - 2.0).abs() < 1e-60);
        assert!(cond < 1e3);
    }

    #[test]
    fn precision_policy_floor_and_growth() {
        assert_eq!(default_precision(4, 2, 0.5), 256);
        let p = default_precision(24, 2, 0.0102);
        assert!(p > 320 && p < 512, "unexpected policy value {p}");
    }
}
