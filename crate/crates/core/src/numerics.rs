//! Scalar arithmetic in two backings: binary64 and exact big rationals.
//! Also the generalized binomial coefficient and compensated summation.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Arithmetic backing selected for a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Exact,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Float => f.write_str("float"),
            Mode::Exact => f.write_str("exact"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(Mode::Float),
            "exact" => Ok(Mode::Exact),
            other => Err(Error::Parse {
                token: other.to_string(),
                reason: "expected `float` or `exact`".into(),
            }),
        }
    }
}

/// The field operations every engine needs. Implemented for `f64` and
/// [`BigRational`]; engines are written once against this trait.
pub trait Real:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialOrd
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const MODE: Mode;

    fn from_bigint(v: &BigInt) -> Self;

    fn from_u64(v: u64) -> Self {
        Self::from_bigint(&BigInt::from(v))
    }

    fn to_f64(&self) -> f64;

    /// Exact conversion from binary64 (every finite double is a rational).
    fn from_f64(x: f64) -> Self;

    fn absolute(&self) -> Self;

    fn powu(&self, e: u32) -> Self {
        num_traits::pow(self.clone(), e as usize)
    }

    /// `coeff * a^ea * b^eb`. The float backing evaluates in log space when
    /// the direct product would overflow or underflow.
    fn scaled_product(coeff: &BigInt, a: &Self, ea: u32, b: &Self, eb: u32) -> Self;

    /// `sign * gen_binomial(top, bottom) * a^ea * b^eb`.
    fn binomial_product(negative: bool, top: i64, bottom: i64, a: &Self, ea: u32, b: &Self, eb: u32) -> Self {
        let c = gen_binomial(top, bottom);
        Self::scaled_product(&if negative { -c } else { c }, a, ea, b, eb)
    }

    /// Sum with a running compensation in float mode; exact in exact mode.
    fn compensated_sum<I: IntoIterator<Item = Self>>(terms: I) -> Self;

    fn into_scalar(self) -> Scalar;

    /// Converts a parsed scalar into this backing. Exact to float is a
    /// rounding conversion; float to exact is refused.
    fn from_scalar(s: &Scalar) -> Result<Self>;
}

impl Real for f64 {
    const MODE: Mode = Mode::Float;

    fn from_bigint(v: &BigInt) -> Self {
        v.to_f64().unwrap_or(f64::NAN)
    }

    fn from_u64(v: u64) -> Self {
        v as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn absolute(&self) -> Self {
        f64::abs(*self)
    }

    fn powu(&self, e: u32) -> Self {
        // i32 exponent is exact repeated squaring for e < 2^31
        f64::powi(*self, e as i32)
    }

    fn scaled_product(coeff: &BigInt, a: &f64, ea: u32, b: &f64, eb: u32) -> f64 {
        if coeff.is_zero() {
            return 0.0;
        }
        let c = coeff.to_f64().unwrap_or(f64::INFINITY);
        let direct = c * f64::powi(*a, ea as i32) * f64::powi(*b, eb as i32);
        if direct.is_finite() && direct.abs() > f64::MIN_POSITIVE * 1e16 {
            return direct;
        }
        let sign = match coeff.sign() {
            Sign::Minus => -1.0,
            _ => 1.0,
        } * if *a < 0.0 && ea % 2 == 1 { -1.0 } else { 1.0 }
            * if *b < 0.0 && eb % 2 == 1 { -1.0 } else { 1.0 };
        let log = ln_bigint(&coeff.abs())
            + if ea > 0 { ea as f64 * f64::abs(*a).ln() } else { 0.0 }
            + if eb > 0 { eb as f64 * f64::abs(*b).ln() } else { 0.0 };
        sign * log.exp()
    }

    /// The coefficient is built in binary64 (in log space once it
    /// overflows) rather than as a big integer.
    fn binomial_product(negative: bool, top: i64, bottom: i64, a: &f64, ea: u32, b: &f64, eb: u32) -> f64 {
        if bottom == top {
            return Self::scaled_product(&BigInt::from(if negative { -1 } else { 1 }), a, ea, b, eb);
        }
        if bottom > top || bottom < 0 {
            return 0.0;
        }
        let (n, k) = (top as u64, (bottom as u64).min((top - bottom) as u64));
        let mut c = 1.0f64;
        let mut ln_c = 0.0f64;
        let mut in_log = false;
        for i in 0..k {
            if in_log {
                ln_c += ((n - i) as f64 / (i + 1) as f64).ln();
            } else {
                c = c * (n - i) as f64 / (i + 1) as f64;
                if c > 1e300 {
                    in_log = true;
                    ln_c = c.ln();
                }
            }
        }
        let sign = if negative { -1.0 } else { 1.0 }
            * if *a < 0.0 && ea % 2 == 1 { -1.0 } else { 1.0 }
            * if *b < 0.0 && eb % 2 == 1 { -1.0 } else { 1.0 };
        if !in_log {
            let direct = c * f64::powi(f64::abs(*a), ea as i32) * f64::powi(f64::abs(*b), eb as i32);
            if direct.is_finite() && direct > f64::MIN_POSITIVE * 1e16 {
                return sign * direct;
            }
            ln_c = c.ln();
        }
        let log = ln_c
            + if ea > 0 { ea as f64 * f64::abs(*a).ln() } else { 0.0 }
            + if eb > 0 { eb as f64 * f64::abs(*b).ln() } else { 0.0 };
        sign * log.exp()
    }

    fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
        let mut acc = NeumaierSum::default();
        for t in terms {
            acc.add(t);
        }
        acc.value()
    }

    fn into_scalar(self) -> Scalar {
        Scalar::Float(self)
    }

    fn from_scalar(s: &Scalar) -> Result<f64> {
        Ok(s.to_f64())
    }
}

impl Real for BigRational {
    const MODE: Mode = Mode::Exact;

    fn from_bigint(v: &BigInt) -> Self {
        BigRational::from_integer(v.clone())
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(BigRational::zero)
    }

    fn absolute(&self) -> Self {
        Signed::abs(self)
    }

    fn scaled_product(coeff: &BigInt, a: &Self, ea: u32, b: &Self, eb: u32) -> Self {
        if coeff.is_zero() {
            return BigRational::zero();
        }
        let numer = coeff * num_traits::pow(a.numer().clone(), ea as usize) * num_traits::pow(b.numer().clone(), eb as usize);
        let denom = num_traits::pow(a.denom().clone(), ea as usize) * num_traits::pow(b.denom().clone(), eb as usize);
        BigRational::new(numer, denom)
    }

    /// Accumulates over a shared denominator and reduces once.
    fn compensated_sum<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        let mut numer = BigInt::zero();
        let mut denom = BigInt::one();
        for t in terms {
            let (tn, td) = t.into();
            if (&denom % &td).is_zero() {
                numer += tn * (&denom / &td);
            } else if (&td % &denom).is_zero() {
                numer = numer * (&td / &denom) + tn;
                denom = td;
            } else {
                numer = numer * &td + tn * &denom;
                denom *= td;
            }
        }
        BigRational::new(numer, denom)
    }

    fn into_scalar(self) -> Scalar {
        Scalar::Exact(self)
    }

    fn from_scalar(s: &Scalar) -> Result<Self> {
        match s {
            Scalar::Exact(r) => Ok(r.clone()),
            Scalar::Float(x) => Err(Error::ModeMismatch(format!(
                "float value {x} cannot be used in exact mode"
            ))),
        }
    }
}

fn ln_bigint(v: &BigInt) -> f64 {
    let bits = v.bits();
    if bits < 1000 {
        return v.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    let top: BigInt = v >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// Kahan–Babuška–Neumaier running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// A real number in either backing.
///
/// Exact values are kept gcd-reduced with a positive denominator (the
/// `BigRational` constructor guarantees this). Operators panic when the two
/// operands are in different modes; use the `checked_*` methods to get an
/// error instead.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Float(f64),
    Exact(BigRational),
}

impl Scalar {
    pub fn mode(&self) -> Mode {
        match self {
            Scalar::Float(_) => Mode::Float,
            Scalar::Exact(_) => Mode::Exact,
        }
    }

    pub fn zero(mode: Mode) -> Self {
        match mode {
            Mode::Float => Scalar::Float(0.0),
            Mode::Exact => Scalar::Exact(BigRational::zero()),
        }
    }

    pub fn from_int(v: &BigInt, mode: Mode) -> Self {
        match mode {
            Mode::Float => Scalar::Float(f64::from_bigint(v)),
            Mode::Exact => Scalar::Exact(BigRational::from_bigint(v)),
        }
    }

    pub fn ratio(numer: i64, denom: i64) -> Self {
        Scalar::Exact(BigRational::new(numer.into(), denom.into()))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Float(x) => *x,
            Scalar::Exact(r) => Real::to_f64(r),
        }
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            Scalar::Exact(r) => Some(r),
            Scalar::Float(_) => None,
        }
    }

    /// Converts to `mode`. Exact to float rounds; float to exact is an error
    /// (a binary float rarely denotes the decimal the user meant).
    pub fn to_mode(&self, mode: Mode) -> Result<Scalar> {
        match (self, mode) {
            (Scalar::Exact(r), Mode::Float) => Ok(Scalar::Float(Real::to_f64(r))),
            (Scalar::Float(x), Mode::Exact) => Err(Error::ModeMismatch(format!(
                "float value {x} cannot be converted to exact"
            ))),
            _ => Ok(self.clone()),
        }
    }

    fn binary(
        self,
        rhs: Scalar,
        op: &str,
        f: impl FnOnce(f64, f64) -> f64,
        e: impl FnOnce(BigRational, BigRational) -> BigRational,
    ) -> Result<Scalar> {
        match (self, rhs) {
            (Scalar::Float(a), Scalar::Float(b)) => Ok(Scalar::Float(f(a, b))),
            (Scalar::Exact(a), Scalar::Exact(b)) => Ok(Scalar::Exact(e(a, b))),
            (a, b) => Err(Error::ModeMismatch(format!(
                "{} {op} {}",
                a.mode(),
                b.mode()
            ))),
        }
    }

    pub fn checked_add(self, rhs: Scalar) -> Result<Scalar> {
        self.binary(rhs, "+", |a, b| a + b, |a, b| a + b)
    }

    pub fn checked_sub(self, rhs: Scalar) -> Result<Scalar> {
        self.binary(rhs, "-", |a, b| a - b, |a, b| a - b)
    }

    pub fn checked_mul(self, rhs: Scalar) -> Result<Scalar> {
        self.binary(rhs, "*", |a, b| a * b, |a, b| a * b)
    }

    pub fn checked_div(self, rhs: Scalar) -> Result<Scalar> {
        if let Scalar::Exact(b) = &rhs {
            if b.is_zero() {
                return Err(Error::domain("divisor", "exact division by zero"));
            }
        }
        self.binary(rhs, "/", |a, b| a / b, |a, b| a / b)
    }
}

macro_rules! scalar_op {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait for Scalar {
            type Output = Scalar;

            fn $method(self, rhs: Scalar) -> Scalar {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }
    };
}

scalar_op!(Add, add, checked_add);
scalar_op!(Sub, sub, checked_sub);
scalar_op!(Mul, mul, checked_mul);
scalar_op!(Div, div, checked_div);

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Float(x) => write!(f, "{x:e}"),
            Scalar::Exact(r) => write!(f, "{r}"),
        }
    }
}

/// Floats serialize as JSON numbers, exact values as `"numer/denom"` strings.
impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scalar::Float(x) => serializer.serialize_f64(*x),
            Scalar::Exact(r) => serializer.collect_str(r),
        }
    }
}

/// Parses `"3/8"` (always exact) or a decimal literal such as `"0.375"`,
/// `"-2"`, `"1.5e-3"` (exact base-10 in exact mode, binary64 in float mode).
pub fn parse_scalar(text: &str, mode: Mode) -> Result<Scalar> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let n = parse_integer(num.trim())?;
        let d = parse_integer(den.trim())?;
        if d.is_zero() {
            return Err(Error::Parse {
                token: text.to_string(),
                reason: "zero denominator".into(),
            });
        }
        return Ok(Scalar::Exact(BigRational::new(n, d)));
    }
    let exact = parse_decimal(text)?;
    match mode {
        Mode::Exact => Ok(Scalar::Exact(exact)),
        Mode::Float => text.parse::<f64>().map(Scalar::Float).map_err(|e| Error::Parse {
            token: text.to_string(),
            reason: e.to_string(),
        }),
    }
}

fn parse_integer(token: &str) -> Result<BigInt> {
    let digits = token.strip_prefix(['+', '-']).unwrap_or(token);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Parse {
            token: token.to_string(),
            reason: "expected an integer".into(),
        });
    }
    token.parse::<BigInt>().map_err(|e| Error::Parse {
        token: token.to_string(),
        reason: e.to_string(),
    })
}

fn parse_decimal(token: &str) -> Result<BigRational> {
    let bad = |reason: &str| Error::Parse {
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let (mantissa, exponent) = match token.find(['e', 'E']) {
        Some(pos) => {
            let exp_text = &token[pos + 1..];
            let exp_digits = exp_text.strip_prefix(['+', '-']).unwrap_or(exp_text);
            if exp_digits.is_empty() || !exp_digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad("malformed exponent"));
            }
            let e: i64 = exp_text.parse().map_err(|_| bad("exponent out of range"))?;
            (&token[..pos], e)
        }
        None => (token, 0),
    };
    let (negative, body) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad("expected a decimal or fraction literal"));
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad("expected a decimal or fraction literal"));
    }
    if exponent.unsigned_abs() > 10_000 {
        return Err(bad("exponent out of range"));
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: BigInt = digits.parse().map_err(|_| bad("expected digits"))?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10u32);
    let value = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// Ordinary binomial coefficient C(n, k) for 0 ≤ k ≤ n, zero when k > n.
pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Binomial coefficient extended to all integer pairs:
///
/// 1. `C(i, i) = 1` for every integer `i`, negative included;
/// 2. `C(i, j) = 0` when `j > i`, even for `j = 0`;
/// 3. `C(i, j) = 0` when `j < 0`;
/// 4. otherwise the ordinary coefficient.
///
/// The rules are applied in that order. Muselli's alternating sum reaches
/// `C(-1, -1)` and `C(-1, 0)` at `n = k` and needs exactly these values.
pub fn gen_binomial(i: i64, j: i64) -> BigInt {
    if j == i {
        BigInt::one()
    } else if j > i || j < 0 {
        BigInt::zero()
    } else {
        binomial(i as u64, j as u64)
    }
}

/// r! as an exact integer.
pub fn factorial(r: u64) -> BigInt {
    (1..=r).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// Falling factorial n(n-1)…(n-r+1); zero when r > n.
pub fn falling_factorial(n: u64, r: u64) -> BigInt {
    if r > n {
        return BigInt::zero();
    }
    ((n - r + 1)..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// Stirling numbers of the second kind S(m, j) for 0 ≤ j ≤ m ≤ `max`,
/// row-major as `table[m][j]`.
pub fn stirling2_table(max: usize) -> Vec<Vec<BigInt>> {
    let mut table = vec![vec![BigInt::zero(); max + 1]; max + 1];
    table[0][0] = BigInt::one();
    for m in 1..=max {
        for j in 1..=m {
            let prev_same = &table[m - 1][j] * BigInt::from(j);
            let prev_left = table[m - 1][j - 1].clone();
            table[m][j] = prev_same + prev_left;
        }
    }
    table
}

/// Sums a sequence of scalars in their common mode. Empty input sums to
/// zero in `mode`.
pub fn compensated_sum(terms: &[Scalar], mode: Mode) -> Result<Scalar> {
    match mode {
        Mode::Float => {
            let mut acc = NeumaierSum::default();
            for t in terms {
                match t {
                    Scalar::Float(x) => acc.add(*x),
                    Scalar::Exact(_) => {
                        return Err(Error::ModeMismatch("exact term in a float sum".into()))
                    }
                }
            }
            Ok(Scalar::Float(acc.value()))
        }
        Mode::Exact => {
            let mut acc = BigRational::zero();
            for t in terms {
                match t {
                    Scalar::Exact(r) => acc += r,
                    Scalar::Float(_) => {
                        return Err(Error::ModeMismatch("float term in an exact sum".into()))
                    }
                }
            }
            Ok(Scalar::Exact(acc))
        }
    }
}
