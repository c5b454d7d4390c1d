//! Cross-validation sweeps over a parameter grid.
//!
//! Each check compares independent routes to the same quantity: the pmf
//! engines against each other, the three factorial-moment expressions,
//! the closed-form mean and variance against the factorial moments, the
//! root-set certification, the pgf against the truncated pmf series, and
//! (optionally) the factorial moments against a direct truncated series
//! `Σ n(n-1)…(n-r+1) f(n)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::moments::{
    factorial_moment, factorial_moment_closed, factorial_moment_muselli, mean, moment_index, variance,
};
use crate::numerics::{falling_factorial, Mode, Real, Scalar};
use crate::params::{Params, DEGENERACY_TOL};
use crate::pmf::{
    closedform_detailed, muselli_detailed, pgf_eval, recurrence_table, tail_bound, PmfEngine, PmfEvaluator,
    ScaledRecurrence,
};
use crate::roots::{certify_roots, find_roots, RootSet};

/// Float-mode absolute tolerance between pmf engines.
pub const PMF_FLOAT_TOL: f64 = 1e-10;
/// Float-mode relative tolerance between factorial-moment routes.
pub const MOMENT_FLOAT_RTOL: f64 = 1e-9;
/// The spectral engine is skipped this close to (but not at) `k/(k+1)`.
pub const NEAR_DEGENERATE: f64 = 1e-6;
/// Target relative size of the truncated tail in the series oracle.
pub const SERIES_RTOL: f64 = 1e-15;
/// Target tail size for the pgf series.
pub const PGF_TAIL: f64 = 1e-13;
pub const PGF_POINTS: [(i64, i64); 3] = [(1, 10), (1, 2), (9, 10)];

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub p_grid: Vec<Scalar>,
    pub k_max: u32,
    pub n_max: u64,
    pub r_max: u64,
    pub mode: Mode,
    /// Run the truncated-series check of the factorial moments.
    pub series: bool,
    /// Test hook: scale this engine's pmf output by 1001/1000.
    pub fault: Option<PmfEngine>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            p_grid: vec![Scalar::ratio(1, 3), Scalar::ratio(1, 2), Scalar::ratio(3, 4)],
            k_max: 6,
            n_max: 200,
            r_max: 8,
            mode: Mode::Exact,
            series: true,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseFailure {
    pub p: String,
    pub k: u32,
    /// `n` for pmf checks, `r` for moment checks, absent otherwise.
    pub index: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: u64,
    pub failures: u64,
    /// Float values flagged as losing precision to cancellation; counted
    /// here instead of being compared.
    pub skipped: u64,
    /// Largest deviation seen (absolute for pmf values, relative for
    /// moments), in binary64.
    pub worst_deviation: f64,
    pub first_failure: Option<CaseFailure>,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        CheckOutcome {
            name,
            cases: 0,
            failures: 0,
            skipped: 0,
            worst_deviation: 0.0,
            first_failure: None,
            passed: true,
        }
    }

    fn record(&mut self, ok: bool, deviation: f64, failure: impl FnOnce() -> CaseFailure) {
        self.cases += 1;
        if deviation.is_nan() || deviation > self.worst_deviation {
            self.worst_deviation = deviation;
        }
        if !ok {
            self.failures += 1;
            self.passed = false;
            if self.first_failure.is_none() {
                self.first_failure = Some(failure());
            }
        }
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }

    fn merge(&mut self, other: CheckOutcome) {
        self.cases += other.cases;
        self.failures += other.failures;
        self.skipped += other.skipped;
        if other.worst_deviation.is_nan() || other.worst_deviation > self.worst_deviation {
            self.worst_deviation = other.worst_deviation;
        }
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
        self.passed &= other.passed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub mode: Mode,
    pub p_grid: Vec<String>,
    pub k_max: u32,
    pub n_max: u64,
    pub r_max: u64,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    if config.k_max < 1 {
        return Err(Error::domain("k_max", "must be >= 1"));
    }
    if config.r_max < 1 {
        return Err(Error::domain("r_max", "must be >= 1"));
    }
    if config.p_grid.is_empty() {
        return Err(Error::domain("p_grid", "must not be empty"));
    }
    match config.mode {
        Mode::Float => run_typed::<f64>(config),
        Mode::Exact => run_typed::<BigRational>(config),
    }
}

fn run_typed<T: Real + SeriesOracle>(config: &VerifyConfig) -> Result<VerifyReport> {
    let mut cases = Vec::new();
    for p in &config.p_grid {
        for k in 1..=config.k_max {
            cases.push(Params::<T>::from_scalar(p, k)?);
        }
    }
    let per_case: Vec<Vec<CheckOutcome>> = cases
        .par_iter()
        .map(|params| check_case(params, config))
        .collect::<Result<_>>()?;

    let mut merged: Vec<CheckOutcome> = Vec::new();
    for outcomes in per_case {
        for outcome in outcomes {
            match merged.iter_mut().find(|c| c.name == outcome.name) {
                Some(existing) => existing.merge(outcome),
                None => merged.push(outcome),
            }
        }
    }
    let passed = merged.iter().all(|c| c.passed);
    Ok(VerifyReport {
        mode: config.mode,
        p_grid: config
            .p_grid
            .iter()
            .map(|p| match p {
                Scalar::Float(x) => x.to_string(),
                Scalar::Exact(r) => r.to_string(),
            })
            .collect(),
        k_max: config.k_max,
        n_max: config.n_max,
        r_max: config.r_max,
        checks: merged,
        passed,
    })
}

fn deviation<T: Real>(a: &T, b: &T) -> f64 {
    (a.clone() - b.clone()).absolute().to_f64()
}

fn relative<T: Real>(a: &T, b: &T) -> f64 {
    let scale = b.absolute().to_f64().max(f64::MIN_POSITIVE);
    deviation(a, b) / scale
}

fn agree<T: Real>(a: &T, b: &T, tol: f64) -> bool {
    match T::MODE {
        Mode::Exact => a == b,
        Mode::Float => deviation(a, b) <= tol,
    }
}

fn agree_rel<T: Real>(a: &T, b: &T, rtol: f64) -> bool {
    match T::MODE {
        Mode::Exact => a == b,
        Mode::Float => relative(a, b) <= rtol,
    }
}

fn failure<T: Real>(params: &Params<T>, index: Option<u64>, detail: String) -> CaseFailure {
    CaseFailure {
        p: params.p().to_string(),
        k: params.k(),
        index,
        detail,
    }
}

fn inject<T: Real>(config: &VerifyConfig, engine: PmfEngine, value: T) -> T {
    if config.fault == Some(engine) {
        value * T::from_u64(1001) / T::from_u64(1000)
    } else {
        value
    }
}

fn check_case<T: Real + SeriesOracle>(params: &Params<T>, config: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let k = params.k() as u64;
    let reference = recurrence_table(params, config.n_max);

    // pmf engines against the recurrence
    let mut cross = CheckOutcome::new("pmf_cross_engine");
    for (n, f_ref) in reference.iter().enumerate() {
        let n = n as u64;
        let f_ref = inject(config, PmfEngine::Recurrence, f_ref.clone());
        for (engine, outcome) in [
            (PmfEngine::Muselli, muselli_detailed(params, n)),
            (PmfEngine::ClosedForm, closedform_detailed(params, n)),
        ] {
            if outcome.degraded {
                cross.skip();
                continue;
            }
            let value = inject(config, engine, outcome.value);
            let dev = deviation(&value, &f_ref);
            cross.record(agree(&value, &f_ref, PMF_FLOAT_TOL), dev, || {
                failure(params, Some(n), format!("{engine} gave {value}, recurrence gave {f_ref}"))
            });
        }
    }
    out.push(cross);

    // support and plateau facts
    let mut shape = CheckOutcome::new("pmf_support_plateau");
    for (n, f) in reference.iter().enumerate() {
        let n = n as u64;
        let (ok, dev) = if n < k {
            (f.is_zero(), f.absolute().to_f64())
        } else if n == k {
            (agree(f, &params.pk(), PMF_FLOAT_TOL), deviation(f, &params.pk()))
        } else if n <= 2 * k {
            (agree(f, &params.qpk(), PMF_FLOAT_TOL), deviation(f, &params.qpk()))
        } else {
            (*f > T::zero(), 0.0)
        };
        shape.record(ok, dev, || failure(params, Some(n), format!("unexpected value {f}")));
    }
    out.push(shape);

    // roots and the spectral engine run in binary64 in both modes
    let fp = params.to_float()?;
    let mut cert_check = CheckOutcome::new("root_certification");
    let mut spectral = CheckOutcome::new("pmf_rootsum");
    match find_roots(&fp) {
        Ok(roots) => {
            let cert = certify_roots(&roots, &fp);
            cert_check.record(cert.passed, cert.max_residual, || {
                failure(params, None, cert.warnings.join("; "))
            });
            let threshold = fp.k() as f64 / (fp.k() as f64 + 1.0);
            let near = (fp.p() - threshold).abs();
            let skip = !fp.is_degenerate() && (DEGENERACY_TOL..NEAR_DEGENERATE).contains(&near);
            if !skip {
                let evaluator = PmfEvaluator::new(fp.clone(), PmfEngine::RootSum)?;
                for (n, f_ref) in reference.iter().enumerate() {
                    let f_ref = f_ref.to_f64();
                    match evaluator.eval(n as u64) {
                        Ok(v) => {
                            let v = inject(config, PmfEngine::RootSum, v);
                            let dev = (v - f_ref).abs();
                            spectral.record(dev <= PMF_FLOAT_TOL, dev, || {
                                failure(params, Some(n as u64), format!("rootsum gave {v:e}, recurrence gave {f_ref:e}"))
                            });
                        }
                        Err(e) => spectral.record(false, f64::NAN, || {
                            failure(params, Some(n as u64), e.to_string())
                        }),
                    }
                }
            }
        }
        Err(e) => cert_check.record(false, f64::NAN, || failure(params, None, e.to_string())),
    }
    out.push(cert_check);
    out.push(spectral);

    // factorial moments: three routes, mean and variance identities
    let mut routes = CheckOutcome::new("moments_three_route");
    let mut mean_check = CheckOutcome::new("mean_identity");
    let mut var_check = CheckOutcome::new("variance_identity");
    let engines: Vec<PmfEngine> = [PmfEngine::Recurrence, PmfEngine::Muselli, PmfEngine::ClosedForm]
        .into_iter()
        .collect();
    let mut first_two = Vec::new();
    for r in 1..=config.r_max {
        let via_muselli = factorial_moment_muselli(params, r)?;
        let via_closed = factorial_moment_closed(params, r)?;
        let mut primary = None;
        for &engine in &engines {
            let evaluator = PmfEvaluator::new(params.clone(), engine)?;
            let f = inject(config, engine, evaluator.eval(moment_index(params.k(), r))?);
            let value = T::from_bigint(&crate::numerics::factorial(r)) * f
                / params.qpk().powu(r as u32 + 1);
            for (label, other) in [("muselli sum", &via_muselli), ("closed-form sum", &via_closed)] {
                let dev = relative(&value, other);
                routes.record(agree_rel(&value, other, MOMENT_FLOAT_RTOL), dev, || {
                    failure(params, Some(r), format!("pmf index route ({engine}) gave {value}, {label} gave {other}"))
                });
            }
            if primary.is_none() {
                primary = Some(value);
            }
        }
        if r <= 2 {
            first_two.push(primary.unwrap());
        }
    }
    if first_two.len() < 2 {
        first_two.push(factorial_moment(params, 2, PmfEngine::Recurrence)?);
    }
    let m1 = first_two[0].clone();
    let m2 = first_two[1].clone();
    let mu = mean(params);
    mean_check.record(agree_rel(&m1, &mu, MOMENT_FLOAT_RTOL), relative(&m1, &mu), || {
        failure(params, Some(1), format!("μ_(1) = {m1}, closed-form mean = {mu}"))
    });
    let from_moments = m2 - m1.clone() * m1.clone() + m1;
    let var = variance(params);
    var_check.record(
        agree_rel(&from_moments, &var, MOMENT_FLOAT_RTOL),
        relative(&from_moments, &var),
        || failure(params, Some(2), format!("μ_(2) - μ² + μ = {from_moments}, closed-form variance = {var}")),
    );
    out.push(routes);
    out.push(mean_check);
    out.push(var_check);

    out.push(pgf_check(params)?);

    if config.series {
        out.push(T::series_check(params, config.r_max)?);
    }
    Ok(out)
}

/// `Σ_{n≤N} f(n) s^n` against the pgf, with `N` chosen so that
/// `s^(N+1)/(1-s)` (which bounds the remainder, as `f ≤ 1`) is below
/// [`PGF_TAIL`]. Also `P(1) = 1`.
fn pgf_check<T: Real>(params: &Params<T>) -> Result<CheckOutcome> {
    let mut check = CheckOutcome::new("pgf_identity");
    for (num, den) in PGF_POINTS {
        let s_f = num as f64 / den as f64;
        let n_stop = ((PGF_TAIL * (1.0 - s_f)).ln() / s_f.ln()).ceil() as u64;
        let bound = s_f.powi(n_stop as i32 + 1) / (1.0 - s_f);
        let s = T::from_u64(num as u64) / T::from_u64(den as u64);
        let table = recurrence_table(params, n_stop);
        let mut partial = T::zero();
        let mut s_pow = T::one();
        for f in &table {
            partial = partial + f.clone() * s_pow.clone();
            s_pow = s_pow * s.clone();
        }
        let value = pgf_eval(params, &s)?;
        let gap = value.clone() - partial.clone();
        let ok = match T::MODE {
            Mode::Exact => gap >= T::zero() && gap.to_f64() <= bound,
            Mode::Float => gap.to_f64().abs() <= bound + 1e-14,
        };
        check.record(ok, gap.to_f64().abs(), || {
            failure(params, None, format!("s = {num}/{den}: pgf {value}, truncated series {partial}"))
        });
    }
    let at_one = pgf_eval(params, &T::one())?;
    check.record(agree(&at_one, &T::one(), 1e-15), deviation(&at_one, &T::one()), || {
        failure(params, None, format!("pgf(1) = {at_one}"))
    });
    Ok(check)
}

/// Smallest `N` (up to doubling granularity, then bisected) at which the
/// spectral bound on `Σ_{n>N} n^(r) f(n)` falls below `rtol · target`.
pub fn series_truncation(params: &Params<f64>, roots: &RootSet, r: u64, target: f64, rtol: f64) -> Result<u64> {
    let ok = |n: u64| -> Result<bool> { Ok(tail_bound(params, roots, n, r)? <= rtol * target) };
    let mut hi = moment_index(params.k(), r).max(16);
    while !ok(hi)? {
        hi *= 2;
        if hi > 1 << 26 {
            return Err(Error::domain("series", "truncation point beyond 2^26 terms"));
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// One comparison of a factorial moment against its truncated series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesComparison {
    pub r: u64,
    pub truncation: u64,
    pub moment: f64,
    /// `μ_(r) - Σ_{n≤N} n^(r) f(n)`.
    pub gap: f64,
    pub tail_bound: f64,
    pub passed: bool,
}

/// Truncated-series evaluation of the factorial moments, dispatched on the
/// scalar backing.
pub trait SeriesOracle: Real {
    /// `[Σ_{n≤N} n^(r) f(n) for r in 1..=r_max]`.
    fn truncated_series(params: &Params<Self>, r_max: u64, n_stop: u64) -> Vec<Self>;

    fn series_check(params: &Params<Self>, r_max: u64) -> Result<CheckOutcome> {
        let comparisons = series_comparisons(params, r_max)?;
        let mut check = CheckOutcome::new("series_oracle");
        for c in comparisons {
            let rel = c.gap.abs() / c.moment;
            check.record(c.passed, rel, || {
                failure(
                    params,
                    Some(c.r),
                    format!("gap {:e} vs tail bound {:e} at N = {}", c.gap, c.tail_bound, c.truncation),
                )
            });
        }
        Ok(check)
    }
}

impl SeriesOracle for f64 {
    fn truncated_series(params: &Params<f64>, r_max: u64, n_stop: u64) -> Vec<f64> {
        let table = recurrence_table(params, n_stop);
        (1..=r_max)
            .map(|r| {
                let mut acc = crate::numerics::NeumaierSum::default();
                let mut weight = 0.0f64;
                for (n, f) in table.iter().enumerate().skip(r as usize) {
                    let n = n as u64;
                    weight = if n == r {
                        (1..=r).map(|i| i as f64).product()
                    } else {
                        weight * n as f64 / (n - r) as f64
                    };
                    acc.add(weight * f);
                }
                acc.value()
            })
            .collect()
    }
}

impl SeriesOracle for BigRational {
    /// Integer Horner accumulation over `F(n) = b^n f(n)`: one division at
    /// the very end.
    fn truncated_series(params: &Params<BigRational>, r_max: u64, n_stop: u64) -> Vec<BigRational> {
        let mut scaled = ScaledRecurrence::new(params);
        let b = scaled.denominator().clone();
        let mut acc = vec![BigInt::zero(); r_max as usize];
        for (n, big_f) in scaled.by_ref().take(n_stop as usize + 1) {
            for (i, a) in acc.iter_mut().enumerate() {
                *a *= &b;
                let r = i as u64 + 1;
                if n >= r && !big_f.is_zero() {
                    *a += &big_f * falling_factorial(n, r);
                }
            }
        }
        let scale = num_traits::pow(b, n_stop as usize);
        acc.into_iter()
            .map(|a| BigRational::new(a, scale.clone()))
            .collect()
    }
}

/// Compares each `μ_(r)` (via the recurrence pmf at the single index
/// `(r+1)k + r`) with the series truncated where the spectral tail bound
/// drops below [`SERIES_RTOL`] relative. Exact mode requires
/// `0 ≤ gap ≤ bound`; float mode allows an extra `1e-12` relative for
/// rounding.
pub fn series_comparisons<T: SeriesOracle>(params: &Params<T>, r_max: u64) -> Result<Vec<SeriesComparison>> {
    let fp = params.to_float()?;
    let roots = find_roots(&fp)?;
    let moments: Vec<T> = (1..=r_max)
        .map(|r| factorial_moment(params, r, PmfEngine::Recurrence))
        .collect::<Result<_>>()?;
    let truncations: Vec<u64> = moments
        .iter()
        .enumerate()
        .map(|(i, m)| series_truncation(&fp, &roots, i as u64 + 1, m.to_f64(), SERIES_RTOL))
        .collect::<Result<_>>()?;
    let n_stop = *truncations.iter().max().unwrap();
    let sums = T::truncated_series(params, r_max, n_stop);
    let mut out = Vec::with_capacity(r_max as usize);
    for (i, (m, s)) in moments.iter().zip(&sums).enumerate() {
        let r = i as u64 + 1;
        let bound = tail_bound(&fp, &roots, n_stop, r)?;
        let gap = m.clone() - s.clone();
        let gap_f = gap.to_f64();
        let passed = match T::MODE {
            Mode::Exact => gap >= T::zero() && gap_f <= bound,
            Mode::Float => gap_f.abs() <= bound + 1e-12 * m.to_f64(),
        };
        out.push(SeriesComparison {
            r,
            truncation: n_stop,
            moment: m.to_f64(),
            gap: gap_f,
            tail_bound: bound,
            passed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode) -> VerifyConfig {
        VerifyConfig {
            p_grid: vec![Scalar::ratio(1, 2), Scalar::ratio(2, 3)],
            k_max: 3,
            n_max: 40,
            r_max: 3,
            mode,
            series: true,
            fault: None,
        }
    }

    #[test]
    fn small_grid_passes_in_both_modes() {
        for mode in [Mode::Exact, Mode::Float] {
            let report = run_verify(&small(mode)).unwrap();
            for c in &report.checks {
                assert!(c.passed, "{mode}: {c:?}");
            }
            assert!(report.passed);
            assert!(report.checks.iter().any(|c| c.name == "series_oracle"));
        }
    }

    #[test]
    fn injected_fault_is_reported_with_its_triple() {
        let mut cfg = small(Mode::Exact);
        cfg.fault = Some(PmfEngine::Muselli);
        cfg.series = false;
        let report = run_verify(&cfg).unwrap();
        assert!(!report.passed);
        let cross = report.checks.iter().find(|c| c.name == "pmf_cross_engine").unwrap();
        let f = cross.first_failure.as_ref().unwrap();
        assert_eq!(f.p, "1/2");
        assert_eq!(f.k, 1);
        assert_eq!(f.index, Some(1));
    }

    #[test]
    fn exact_series_gap_is_the_positive_tail() {
        let prm = Params::new(BigRational::new(1.into(), 2.into()), 2).unwrap();
        let cmp = series_comparisons(&prm, 3).unwrap();
        for c in cmp {
            assert!(c.passed, "{c:?}");
            assert!(c.gap > 0.0 && c.gap <= c.tail_bound);
            assert!(c.tail_bound <= SERIES_RTOL * c.moment);
        }
    }

    #[test]
    fn exact_and_float_series_agree() {
        let ex = Params::new(BigRational::new(2.into(), 5.into()), 3).unwrap();
        let fl = Params::new(0.4, 3).unwrap();
        let a = BigRational::truncated_series(&ex, 4, 300);
        let b = f64::truncated_series(&fl, 4, 300);
        for (x, y) in a.iter().zip(&b) {
            let x = Real::to_f64(x);
            assert!(((x - y) / x).abs() < 1e-12);
        }
    }
}
