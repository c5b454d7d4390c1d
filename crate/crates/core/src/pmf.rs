//! The pmf `f_k(n) = P(N_k = n)` through four independent engines, and the
//! probability generating function.
//!
//! Every engine is total in `n`: values below the support (`n < k`,
//! including `n = 0`) are zero.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{Mode, Real};
use crate::params::Params;
use crate::roots::{find_roots, RootSet};

/// Threshold on `Σ|terms| / |sum|` above which a float alternating sum is
/// reported as precision-degraded.
pub const CANCELLATION_RATIO: f64 = 1e6;
/// Largest imaginary part a spectral sum may carry before it is discarded.
pub const IMAGINARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PmfEngine {
    /// Forward iteration of the order-k linear recurrence. Reference engine.
    Recurrence,
    /// Sum over the roots of the auxiliary polynomial. Float only.
    RootSum,
    /// Muselli's alternating binomial sum.
    Muselli,
    /// Piecewise closed form whose binomials never vanish.
    ClosedForm,
}

impl PmfEngine {
    pub const ALL: [PmfEngine; 4] = [
        PmfEngine::Recurrence,
        PmfEngine::RootSum,
        PmfEngine::Muselli,
        PmfEngine::ClosedForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PmfEngine::Recurrence => "recurrence",
            PmfEngine::RootSum => "rootsum",
            PmfEngine::Muselli => "muselli",
            PmfEngine::ClosedForm => "closedform",
        }
    }

    pub fn supports(self, mode: Mode) -> bool {
        !(self == PmfEngine::RootSum && mode == Mode::Exact)
    }
}

impl fmt::Display for PmfEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PmfEngine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "recurrence" => Ok(PmfEngine::Recurrence),
            "rootsum" | "spectral" => Ok(PmfEngine::RootSum),
            "muselli" => Ok(PmfEngine::Muselli),
            "closedform" | "closed" => Ok(PmfEngine::ClosedForm),
            _ => Err(Error::Parse {
                token: s.to_string(),
                reason: "expected one of recurrence, rootsum, muselli, closedform".into(),
            }),
        }
    }
}

/// A summed value together with how much cancellation went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct SumOutcome<T> {
    pub value: T,
    /// `Σ|terms|` in binary64.
    pub abs_sum: f64,
    /// Float mode only: `abs_sum > CANCELLATION_RATIO · |value|`.
    pub degraded: bool,
}

impl<T: Real> SumOutcome<T> {
    fn from_terms(terms: Vec<T>) -> Self {
        let abs_sum: f64 = terms.iter().map(|t| t.to_f64().abs()).sum();
        let value = T::compensated_sum(terms);
        let degraded = T::MODE == Mode::Float
            && abs_sum > 0.0
            && abs_sum > CANCELLATION_RATIO * value.to_f64().abs();
        SumOutcome {
            value,
            abs_sum,
            degraded,
        }
    }

    fn exact(value: T) -> Self {
        let abs_sum = value.to_f64().abs();
        SumOutcome {
            value,
            abs_sum,
            degraded: false,
        }
    }
}

/// `f_k(0..=n_max)` by the recurrence
/// `f(n) = q f(n-1) + pq f(n-2) + … + p^(k-1) q f(n-k)` from
/// `f(1..k-1) = 0`, `f(k) = p^k`.
pub fn recurrence_table<T: Real>(params: &Params<T>, n_max: u64) -> Vec<T> {
    let k = params.k() as usize;
    let n_max = n_max as usize;
    let coeffs: Vec<T> = (0..k)
        .map(|i| params.q().clone() * params.p().powu(i as u32))
        .collect();
    let mut out: Vec<T> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let value = if n < k {
            T::zero()
        } else if n == k {
            params.pk()
        } else {
            // out[n-1-i] for i in 0..k, skipping the n = 0 slot
            coeffs
                .iter()
                .enumerate()
                .filter(|&(i, _)| n > i + 1)
                .fold(T::zero(), |acc, (i, c)| acc + c.clone() * out[n - 1 - i].clone())
        };
        out.push(value);
    }
    out
}

/// Single value of the reference engine. Keeps a window of the last `k`
/// values, so memory is O(k).
pub fn pmf_recurrence<T: Real>(params: &Params<T>, n: u64) -> T {
    let k = params.k() as u64;
    if n < k {
        return T::zero();
    }
    let coeffs: Vec<T> = (0..k as u32)
        .map(|i| params.q().clone() * params.p().powu(i))
        .collect();
    // window[0] = f(m), window[1] = f(m-1), …
    let mut window: std::collections::VecDeque<T> =
        std::iter::repeat_with(T::zero).take(k as usize).collect();
    window[0] = params.pk();
    for _ in k..n {
        let next = coeffs
            .iter()
            .zip(window.iter())
            .fold(T::zero(), |acc, (c, f)| acc + c.clone() * f.clone());
        window.pop_back();
        window.push_front(next);
    }
    window.pop_front().unwrap()
}

/// Exact recurrence on integers: with `p = a/b`, `F(n) = b^n f(n)` obeys
/// `F(n) = Σ_{i=1..k} a^(i-1) (b-a) F(n-i)`, `F(k) = a^k`.
///
/// Yields `F(0), F(1), …` without ever forming a rational, which keeps long
/// exact runs cheap.
#[derive(Debug, Clone)]
pub struct ScaledRecurrence {
    coeffs: Vec<BigInt>,
    window: std::collections::VecDeque<BigInt>,
    denominator: BigInt,
    start: BigInt,
    k: u64,
    n: u64,
}

impl ScaledRecurrence {
    pub fn new(params: &Params<BigRational>) -> Self {
        let a = params.p().numer().clone();
        let b = params.p().denom().clone();
        let k = params.k() as u64;
        let mut coeffs = Vec::with_capacity(k as usize);
        let mut a_pow = BigInt::one();
        for _ in 0..k {
            coeffs.push(&a_pow * (&b - &a));
            a_pow *= &a;
        }
        ScaledRecurrence {
            coeffs,
            window: std::iter::repeat_with(BigInt::zero).take(k as usize).collect(),
            denominator: b,
            start: a_pow,
            k,
            n: 0,
        }
    }

    /// `b`, the denominator of `p`; `f(n) = F(n) / b^n`.
    pub fn denominator(&self) -> &BigInt {
        &self.denominator
    }
}

impl Iterator for ScaledRecurrence {
    type Item = (u64, BigInt);

    fn next(&mut self) -> Option<Self::Item> {
        let n = self.n;
        self.n += 1;
        let value = if n < self.k {
            BigInt::zero()
        } else if n == self.k {
            self.start.clone()
        } else {
            self.coeffs
                .iter()
                .zip(self.window.iter())
                .fold(BigInt::zero(), |acc, (c, f)| acc + c * f)
        };
        if n >= 1 {
            self.window.pop_back();
            self.window.push_front(value.clone());
        }
        Some((n, value))
    }
}

/// Spectral form
/// `f(n) = p^k/(k+1) · Σ_j w_j λ_j^(n-k)` (see [`RootSet::weights`]).
pub fn pmf_rootsum(params: &Params<f64>, roots: &RootSet, n: u64) -> Result<f64> {
    let weights = roots.weights(params)?;
    rootsum_with_weights(params, roots, &weights, n)
}

fn rootsum_with_weights(
    params: &Params<f64>,
    roots: &RootSet,
    weights: &[Complex64],
    n: u64,
) -> Result<f64> {
    let k = params.k() as u64;
    if n < k {
        return Ok(0.0);
    }
    let exponent = n - k;
    let mut re = crate::numerics::NeumaierSum::default();
    let mut im = crate::numerics::NeumaierSum::default();
    for (lambda, w) in roots.roots().iter().zip(weights) {
        let term = w * pow_complex(*lambda, exponent);
        re.add(term.re);
        im.add(term.im);
    }
    let scale = params.pk() / (k as f64 + 1.0);
    let (re, im) = (scale * re.value(), scale * im.value());
    if im.abs() > IMAGINARY_TOL {
        return Err(Error::Consistency(format!(
            "root sum at n={n} kept imaginary part {im:e}"
        )));
    }
    Ok(re)
}

fn pow_complex(z: Complex64, e: u64) -> Complex64 {
    if z.im == 0.0 {
        return Complex64::new(z.re.powi(e.min(i32::MAX as u64) as i32), 0.0);
    }
    let mut base = z;
    let mut e = e;
    let mut acc = Complex64::new(1.0, 0.0);
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Muselli's sum,
/// `Σ_{m=1}^{⌊(n+1)/(k+1)⌋} (-1)^(m-1) p^(mk) q^(m-1) [C(n-mk-1, m-2) + q C(n-mk-1, m-1)]`,
/// with [`gen_binomial`](crate::numerics::gen_binomial) supplying the conventions that make `n = k` work.
pub fn pmf_muselli<T: Real>(params: &Params<T>, n: u64) -> T {
    muselli_detailed(params, n).value
}

pub fn muselli_detailed<T: Real>(params: &Params<T>, n: u64) -> SumOutcome<T> {
    let k = params.k() as u64;
    let upper = (n + 1) / (k + 1);
    let mut terms = Vec::with_capacity(2 * upper as usize);
    for m in 1..=upper {
        let top = n as i64 - (m * k) as i64 - 1;
        let negative = m % 2 == 0;
        let mk = (m * k) as u32;
        terms.push(T::binomial_product(negative, top, m as i64 - 2, params.p(), mk, params.q(), (m - 1) as u32));
        terms.push(T::binomial_product(negative, top, m as i64 - 1, params.p(), mk, params.q(), m as u32));
    }
    SumOutcome::from_terms(terms)
}

/// Piecewise closed form: `0` below `k`, `p^k` at `k`, `q p^k` on the
/// plateau `k+1..=2k`, and beyond that
/// `q p^k - Σ_{m=2}^{⌊(n+1)/(k+1)⌋} (-1)^m p^(mk) q^(m-1) C(n-mk-1, m-2)
///        - Σ_{m=2}^{⌊n/(k+1)⌋} (-1)^m p^(mk) q^m C(n-mk-1, m-1)`.
pub fn pmf_closedform<T: Real>(params: &Params<T>, n: u64) -> T {
    closedform_detailed(params, n).value
}

pub fn closedform_detailed<T: Real>(params: &Params<T>, n: u64) -> SumOutcome<T> {
    let k = params.k() as u64;
    if n < k {
        return SumOutcome::exact(T::zero());
    }
    if n == k {
        return SumOutcome::exact(params.pk());
    }
    if n <= 2 * k {
        return SumOutcome::exact(params.qpk());
    }
    let mut terms = vec![params.qpk()];
    let in_range = |top: i64, bottom: i64| {
        assert!(
            top >= 0 && bottom >= 0 && bottom <= top,
            "closed-form binomial C({top}, {bottom}) out of range at n={n}, k={k}"
        );
    };
    // -(-1)^m = +1 for odd m
    for m in 2..=(n + 1) / (k + 1) {
        let top = n as i64 - (m * k) as i64 - 1;
        in_range(top, m as i64 - 2);
        terms.push(T::binomial_product(m % 2 == 0, top, m as i64 - 2, params.p(), (m * k) as u32, params.q(), (m - 1) as u32));
    }
    for m in 2..=n / (k + 1) {
        let top = n as i64 - (m * k) as i64 - 1;
        in_range(top, m as i64 - 1);
        terms.push(T::binomial_product(m % 2 == 0, top, m as i64 - 1, params.p(), (m * k) as u32, params.q(), m as u32));
    }
    SumOutcome::from_terms(terms)
}

/// `P(s) = p^k s^k (1 - ps) / (1 - s + q p^k s^(k+1))` for `-1 < s <= 1`.
pub fn pgf_eval<T: Real>(params: &Params<T>, s: &T) -> Result<T> {
    if *s > T::one() || *s <= -T::one() {
        return Err(Error::domain("s", format!("pgf needs -1 < s <= 1, got {s}")));
    }
    let k = params.k();
    let numer = params.pk() * s.powu(k) * (T::one() - params.p().clone() * s.clone());
    let denom = T::one() - s.clone() + params.qpk() * s.powu(k + 1);
    if denom.is_zero() {
        return Err(Error::domain("s", format!("pgf denominator vanishes at s = {s}")));
    }
    Ok(numer / denom)
}

/// Upper bound on `Σ_{n>n_max} n(n-1)…(n-r+1) f(n)` from the spectral form:
/// `p^k/(k+1) · Σ_j |w_j| Σ_{n>n_max} n^(r) |λ_j|^(n-k)`, each inner tail
/// bounded by its first term over `1 - ratio`. With `r = 0` this bounds the
/// probability mass beyond `n_max`. Returns infinity while the term ratio is
/// still ≥ 1.
pub fn tail_bound(params: &Params<f64>, roots: &RootSet, n_max: u64, r: u64) -> Result<f64> {
    let weights = roots.weights(params)?;
    let k = params.k() as u64;
    if n_max + 1 < k {
        return Ok(f64::INFINITY);
    }
    let first = n_max + 1;
    if r > first {
        return Ok(f64::INFINITY);
    }
    let log_falling: f64 = (0..r).map(|i| ((first - i) as f64).ln()).sum();
    let growth = (first + 1) as f64 / (first + 1 - r) as f64;
    let mut total = 0.0;
    for (j, (lambda, w)) in roots.roots().iter().zip(&weights).enumerate() {
        let rho = lambda.norm();
        if rho == 0.0 {
            continue;
        }
        // 1 - λ0 = q p^k / λ0^k keeps its digits when λ0 is close to 1
        let (gap, ln_rho) = if j == roots.principal_index() {
            let gap = params.qpk() / rho.powi(k as i32);
            (gap, (-gap).ln_1p())
        } else {
            (1.0 - rho, rho.ln())
        };
        let one_minus_ratio = gap - (growth - 1.0) * rho;
        if one_minus_ratio <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let log_term = log_falling + (first - k) as f64 * ln_rho;
        total += w.norm() * log_term.exp() / one_minus_ratio;
    }
    Ok(params.pk() / (k as f64 + 1.0) * total)
}

/// Evaluates one engine repeatedly for fixed parameters, caching the root
/// set the spectral engine needs.
#[derive(Debug, Clone)]
pub struct PmfEvaluator<T> {
    params: Params<T>,
    engine: PmfEngine,
    spectral: Option<(Params<f64>, RootSet, Vec<Complex64>)>,
}

impl<T: Real> PmfEvaluator<T> {
    pub fn new(params: Params<T>, engine: PmfEngine) -> Result<Self> {
        let spectral = if engine == PmfEngine::RootSum {
            if T::MODE == Mode::Exact {
                return Err(Error::FloatOnly("rootsum"));
            }
            let fp = params.to_float()?;
            let roots = find_roots(&fp)?;
            let weights = roots.weights(&fp)?;
            Some((fp, roots, weights))
        } else {
            None
        };
        Ok(PmfEvaluator {
            params,
            engine,
            spectral,
        })
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn engine(&self) -> PmfEngine {
        self.engine
    }

    pub fn root_set(&self) -> Option<&RootSet> {
        self.spectral.as_ref().map(|(_, r, _)| r)
    }

    pub fn eval(&self, n: u64) -> Result<T> {
        self.eval_detailed(n).map(|o| o.value)
    }

    pub fn eval_detailed(&self, n: u64) -> Result<SumOutcome<T>> {
        Ok(match self.engine {
            PmfEngine::Recurrence => SumOutcome::exact(pmf_recurrence(&self.params, n)),
            PmfEngine::Muselli => muselli_detailed(&self.params, n),
            PmfEngine::ClosedForm => closedform_detailed(&self.params, n),
            PmfEngine::RootSum => {
                let (fp, roots, weights) = self.spectral.as_ref().expect("built in new");
                SumOutcome::exact(T::from_f64(rootsum_with_weights(fp, roots, weights, n)?))
            }
        })
    }
}

/// `f_k(n)` by the chosen engine.
pub fn pmf<T: Real>(params: &Params<T>, engine: PmfEngine, n: u64) -> Result<T> {
    PmfEvaluator::new(params.clone(), engine)?.eval(n)
}

/// `f_k(0..=n_max)` with running sums.
#[derive(Debug, Clone)]
pub struct PmfTable<T> {
    pub params: Params<T>,
    pub engine: PmfEngine,
    pub entries: Vec<T>,
    pub cumulative: Vec<T>,
    /// Per-entry cancellation markers (float alternating sums only).
    pub degraded: Vec<bool>,
    /// Bound on the mass beyond `n_max`; absent when no root set could be
    /// computed for these parameters.
    pub tail_bound: Option<f64>,
}

impl<T: Real> PmfTable<T> {
    pub fn n_max(&self) -> u64 {
        self.entries.len() as u64 - 1
    }

    /// `n,f,cumulative` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,f,cumulative\n");
        for (n, (f, c)) in self.entries.iter().zip(&self.cumulative).enumerate() {
            out.push_str(&format!("{n},{},{}\n", csv_number(f), csv_number(c)));
        }
        out
    }
}

fn csv_number<T: Real>(v: &T) -> String {
    match T::MODE {
        Mode::Float => format!("{:e}", v.to_f64()),
        Mode::Exact => v.to_string(),
    }
}

impl<T: Real> Serialize for PmfTable<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Row {
            n: u64,
            f: crate::numerics::Scalar,
            cumulative: crate::numerics::Scalar,
            degraded: bool,
        }
        let rows: Vec<Row> = self
            .entries
            .iter()
            .zip(&self.cumulative)
            .zip(&self.degraded)
            .enumerate()
            .map(|(n, ((f, c), d))| Row {
                n: n as u64,
                f: f.clone().into_scalar(),
                cumulative: c.clone().into_scalar(),
                degraded: *d,
            })
            .collect();
        let mut st = serializer.serialize_struct("PmfTable", 7)?;
        st.serialize_field("p", &self.params.p().clone().into_scalar())?;
        st.serialize_field("k", &self.params.k())?;
        st.serialize_field("mode", &T::MODE)?;
        st.serialize_field("engine", &self.engine)?;
        st.serialize_field("n_max", &self.n_max())?;
        st.serialize_field("tail_bound", &self.tail_bound)?;
        st.serialize_field("rows", &rows)?;
        st.end()
    }
}

/// Tabulates `f_k(0..=n_max)`; requires `n_max >= k`.
pub fn build_table<T: Real>(params: &Params<T>, engine: PmfEngine, n_max: u64) -> Result<PmfTable<T>> {
    if n_max < params.k() as u64 {
        return Err(Error::domain(
            "n_max",
            format!("must be at least k = {}, got {n_max}", params.k()),
        ));
    }
    let evaluator = PmfEvaluator::new(params.clone(), engine)?;
    let (entries, degraded): (Vec<T>, Vec<bool>) = if engine == PmfEngine::Recurrence {
        let e = recurrence_table(params, n_max);
        let d = vec![false; e.len()];
        (e, d)
    } else {
        (0..=n_max)
            .map(|n| evaluator.eval_detailed(n).map(|o| (o.value, o.degraded)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip()
    };
    let mut cumulative = Vec::with_capacity(entries.len());
    let mut running = T::zero();
    for f in &entries {
        running = running + f.clone();
        cumulative.push(running.clone());
    }
    let tail_bound = match evaluator.spectral.as_ref() {
        Some((fp, roots, _)) => tail_bound(fp, roots, n_max, 0).ok(),
        None => params
            .to_float()
            .ok()
            .and_then(|fp| find_roots(&fp).ok().map(|roots| (fp, roots)))
            .and_then(|(fp, roots)| tail_bound(&fp, &roots, n_max, 0).ok()),
    };
    Ok(PmfTable {
        params: params.clone(),
        engine,
        entries,
        cumulative,
        degraded,
        tail_bound,
    })
}
