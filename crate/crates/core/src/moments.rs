//! Factorial moments `μ_(r) = E[N(N-1)…(N-r+1)]`.
//!
//! The primary route needs a single pmf value:
//! `μ_(r) = r! f_k((r+1)k + r) / (q p^k)^(r+1)`. Substituting Muselli's
//! sum or the closed-form pmf at that index gives two further finite-sum
//! expressions which are evaluated directly here and must agree with it.

use num_bigint::BigInt;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{binomial, factorial, gen_binomial, stirling2_table, Real};
use crate::params::Params;
use crate::pmf::{PmfEngine, PmfEvaluator};

/// The pmf index the r-th factorial moment is read from.
pub fn moment_index(k: u32, r: u64) -> u64 {
    (r + 1) * k as u64 + r
}

fn check_order(r: u64) -> Result<()> {
    if r < 1 {
        return Err(Error::domain("r", "factorial moment order must be >= 1"));
    }
    Ok(())
}

fn prefactor<T: Real>(params: &Params<T>, r: u64) -> T {
    T::from_bigint(&factorial(r)) / params.qpk().powu(r as u32 + 1)
}

/// `r! f_k((r+1)k + r) / (q p^k)^(r+1)` with `f_k` from `engine`.
pub fn factorial_moment<T: Real>(params: &Params<T>, r: u64, engine: PmfEngine) -> Result<T> {
    let evaluator = PmfEvaluator::new(params.clone(), engine)?;
    factorial_moment_with(&evaluator, r).map(|(v, _)| v)
}

/// Same as [`factorial_moment`] with a prepared evaluator; also returns the
/// pmf's precision-degraded marker.
pub fn factorial_moment_with<T: Real>(evaluator: &PmfEvaluator<T>, r: u64) -> Result<(T, bool)> {
    check_order(r)?;
    let params = evaluator.params();
    let f = evaluator.eval_detailed(moment_index(params.k(), r))?;
    Ok((prefactor(params, r) * f.value, f.degraded))
}

/// Direct evaluation of
/// `r!/(qp^k)^(r+1) Σ_{m=1}^{r+1} (-1)^(m-1) p^(mk) q^(m-1)
///  [C((r+1-m)k+r-1, m-2) + q C((r+1-m)k+r-1, m-1)]`.
pub fn factorial_moment_muselli<T: Real>(params: &Params<T>, r: u64) -> Result<T> {
    check_order(r)?;
    let k = params.k() as u64;
    let mut terms = Vec::with_capacity(2 * (r as usize + 1));
    for m in 1..=r + 1 {
        let top = ((r + 1 - m) * k + r) as i64 - 1;
        let sign: i64 = if m % 2 == 1 { 1 } else { -1 };
        let mk = (m * k) as u32;
        let first = gen_binomial(top, m as i64 - 2) * sign;
        let second = gen_binomial(top, m as i64 - 1) * sign;
        terms.push(T::scaled_product(&first, params.p(), mk, params.q(), (m - 1) as u32));
        terms.push(T::scaled_product(&second, params.p(), mk, params.q(), m as u32));
    }
    Ok(prefactor(params, r) * T::compensated_sum(terms))
}

/// Direct evaluation of
/// `r!/(qp^k)^(r+1) { q p^k - Σ_{m=2}^{r+1} (-1)^m p^(mk) q^(m-1) C((r+1-m)k+r-1, m-2)
///                            - Σ_{m=2}^{r} (-1)^m p^(mk) q^m C((r+1-m)k+r-1, m-1) }`.
pub fn factorial_moment_closed<T: Real>(params: &Params<T>, r: u64) -> Result<T> {
    check_order(r)?;
    let k = params.k() as u64;
    let top = |m: u64| (r + 1 - m) * k + r - 1;
    // the leading minus folds into the sign: -(-1)^m = (-1)^(m+1)
    let sign = |m: u64| -> BigInt { BigInt::from(if m % 2 == 1 { 1 } else { -1 }) };
    let mut terms = vec![params.qpk()];
    for m in 2..=r + 1 {
        let c = binomial(top(m), m - 2) * sign(m);
        terms.push(T::scaled_product(&c, params.p(), (m * k) as u32, params.q(), (m - 1) as u32));
    }
    for m in 2..=r {
        let c = binomial(top(m), m - 1) * sign(m);
        terms.push(T::scaled_product(&c, params.p(), (m * k) as u32, params.q(), m as u32));
    }
    Ok(prefactor(params, r) * T::compensated_sum(terms))
}

/// `(1 - p^k) / (q p^k)`.
pub fn mean<T: Real>(params: &Params<T>) -> T {
    (T::one() - params.pk()) / params.qpk()
}

/// `1/(q p^k)^2 - (2k+1)/(q p^k) - p/q^2`.
pub fn variance<T: Real>(params: &Params<T>) -> T {
    let c = params.qpk();
    let two_k_plus_one = T::from_u64(2 * params.k() as u64 + 1);
    T::one() / (c.clone() * c.clone()) - two_k_plus_one / c
        - params.p().clone() / (params.q().clone() * params.q().clone())
}

/// Factorial, raw and central moments up to order `r_max`.
#[derive(Debug, Clone)]
pub struct MomentReport<T> {
    pub params: Params<T>,
    pub r_max: u64,
    /// `μ_(1) … μ_(r_max)`.
    pub factorial: Vec<T>,
    /// `E[N] … E[N^r_max]`.
    pub raw: Vec<T>,
    /// `E[(N-μ)^2] … E[(N-μ)^r_max]`; empty when `r_max = 1`.
    pub central: Vec<T>,
    pub mean: T,
    pub variance: T,
    pub method: PmfEngine,
    /// Per factorial moment: the pmf value behind it lost precision.
    pub precision_flags: Vec<bool>,
    /// Whether `μ_(r+1) > μ_(r)` held throughout (observed, not enforced).
    pub increasing: bool,
}

/// Builds the report from `factorial_moment` with the given engine.
/// Raw moments use `E[N^m] = Σ_j S(m, j) μ_(j)` with Stirling numbers of
/// the second kind; central moments expand around the mean binomially.
pub fn moment_report<T: Real>(params: &Params<T>, r_max: u64, engine: PmfEngine) -> Result<MomentReport<T>> {
    if r_max < 1 {
        return Err(Error::domain("r_max", "must be >= 1"));
    }
    let evaluator = PmfEvaluator::new(params.clone(), engine)?;
    let mut factorial = Vec::with_capacity(r_max as usize);
    let mut precision_flags = Vec::with_capacity(r_max as usize);
    for r in 1..=r_max {
        let (value, degraded) = factorial_moment_with(&evaluator, r)?;
        if value <= T::zero() {
            return Err(Error::Consistency(format!(
                "factorial moment of order {r} is not positive: {value}"
            )));
        }
        factorial.push(value);
        precision_flags.push(degraded);
    }
    let increasing = factorial.windows(2).all(|w| w[1] > w[0]);

    let stirling = stirling2_table(r_max as usize);
    let raw: Vec<T> = (1..=r_max as usize)
        .map(|m| {
            (1..=m).fold(T::zero(), |acc, j| {
                acc + T::from_bigint(&stirling[m][j]) * factorial[j - 1].clone()
            })
        })
        .collect();

    let mu = raw[0].clone();
    let raw_at = |i: usize| if i == 0 { T::one() } else { raw[i - 1].clone() };
    let central: Vec<T> = (2..=r_max as usize)
        .map(|m| {
            (0..=m).fold(T::zero(), |acc, i| {
                let c = T::from_bigint(&binomial(m as u64, i as u64));
                acc + c * raw_at(i) * (-mu.clone()).powu((m - i) as u32)
            })
        })
        .collect();

    Ok(MomentReport {
        params: params.clone(),
        r_max,
        factorial,
        raw,
        central,
        mean: mean(params),
        variance: variance(params),
        method: engine,
        precision_flags,
        increasing,
    })
}

impl<T: Real> MomentReport<T> {
    /// Aligned human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "p = {}, k = {}, mode = {}, engine = {}\nmean = {}\nvariance = {}\n\n",
            self.params.p(),
            self.params.k(),
            T::MODE,
            self.method,
            self.mean,
            self.variance
        );
        out.push_str(&format!(
            "{:>3}  {:>28}  {:>28}  {:>28}\n",
            "r", "factorial", "raw", "central"
        ));
        for i in 0..self.r_max as usize {
            let central = if i == 0 {
                "0".to_string()
            } else {
                self.central[i - 1].to_string()
            };
            let flag = if self.precision_flags[i] { " (degraded)" } else { "" };
            out.push_str(&format!(
                "{:>3}  {:>28}  {:>28}  {:>28}{flag}\n",
                i + 1,
                self.factorial[i].to_string(),
                self.raw[i].to_string(),
                central
            ));
        }
        out
    }

    /// `order,factorial,raw,central` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,factorial,raw,central\n");
        for i in 0..self.r_max as usize {
            let central = if i == 0 {
                "0".to_string()
            } else {
                self.central[i - 1].to_string()
            };
            out.push_str(&format!("{},{},{},{}\n", i + 1, self.factorial[i], self.raw[i], central));
        }
        out
    }
}

impl<T: Real> Serialize for MomentReport<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let scalars = |v: &[T]| v.iter().map(|x| x.clone().into_scalar()).collect::<Vec<_>>();
        let mut st = serializer.serialize_struct("MomentReport", 12)?;
        st.serialize_field("p", &self.params.p().clone().into_scalar())?;
        st.serialize_field("k", &self.params.k())?;
        st.serialize_field("mode", &T::MODE)?;
        st.serialize_field("method", &self.method)?;
        st.serialize_field("r_max", &self.r_max)?;
        st.serialize_field("mean", &self.mean.clone().into_scalar())?;
        st.serialize_field("variance", &self.variance.clone().into_scalar())?;
        st.serialize_field("factorial", &scalars(&self.factorial))?;
        st.serialize_field("raw", &scalars(&self.raw))?;
        st.serialize_field("central", &scalars(&self.central))?;
        st.serialize_field("precision_flags", &self.precision_flags)?;
        st.serialize_field("increasing", &self.increasing)?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn exact(pn: i64, pd: i64, k: u32) -> Params<BigRational> {
        Params::new(r(pn, pd), k).unwrap()
    }

    #[test]
    fn eq5_examples() {
        let prm = exact(1, 2, 2);
        assert_eq!(factorial_moment(&prm, 1, PmfEngine::Recurrence).unwrap(), r(6, 1));
        assert_eq!(factorial_moment(&prm, 2, PmfEngine::Recurrence).unwrap(), r(52, 1));
        let geo = exact(1, 2, 1);
        assert_eq!(factorial_moment(&geo, 2, PmfEngine::Recurrence).unwrap(), r(4, 1));
    }

    #[test]
    fn muselli_route_examples() {
        assert_eq!(factorial_moment_muselli(&exact(1, 2, 2), 1).unwrap(), r(6, 1));
        assert_eq!(factorial_moment_muselli(&exact(1, 2, 1), 1).unwrap(), r(2, 1));
        assert_eq!(factorial_moment_muselli(&exact(1, 2, 2), 2).unwrap(), r(52, 1));
    }

    #[test]
    fn closed_route_examples() {
        assert_eq!(factorial_moment_closed(&exact(1, 2, 2), 1).unwrap(), r(6, 1));
        assert_eq!(factorial_moment_closed(&exact(1, 3, 2), 1).unwrap(), r(12, 1));
        assert_eq!(factorial_moment_closed(&exact(1, 2, 2), 2).unwrap(), r(52, 1));
    }

    #[test]
    fn mean_and_variance_examples() {
        assert_eq!(mean(&exact(1, 2, 2)), r(6, 1));
        assert_eq!(mean(&exact(1, 2, 1)), r(2, 1));
        assert_eq!(mean(&exact(1, 3, 2)), r(12, 1));
        assert_eq!(variance(&exact(1, 2, 2)), r(22, 1));
        assert_eq!(variance(&exact(1, 2, 1)), r(2, 1));
        let prm = exact(1, 3, 2);
        let m1 = factorial_moment(&prm, 1, PmfEngine::Recurrence).unwrap();
        let m2 = factorial_moment(&prm, 2, PmfEngine::Recurrence).unwrap();
        assert_eq!(variance(&prm), m2 - m1.clone() * m1.clone() + m1);
    }

    #[test]
    fn order_zero_is_rejected() {
        let prm = exact(1, 2, 2);
        assert!(factorial_moment(&prm, 0, PmfEngine::Recurrence).is_err());
        assert!(factorial_moment_muselli(&prm, 0).is_err());
        assert!(factorial_moment_closed(&prm, 0).is_err());
        assert!(matches!(
            moment_report(&prm, 0, PmfEngine::Recurrence),
            Err(Error::Domain { name: "r_max", .. })
        ));
    }

    #[test]
    fn report_examples() {
        let rep = moment_report(&exact(1, 2, 2), 2, PmfEngine::Recurrence).unwrap();
        assert_eq!(rep.factorial, vec![r(6, 1), r(52, 1)]);
        assert_eq!(rep.raw, vec![r(6, 1), r(58, 1)]);
        assert_eq!(rep.central, vec![r(22, 1)]);
        assert_eq!(rep.variance, r(22, 1));
        assert!(rep.increasing);

        let rep = moment_report(&exact(1, 2, 1), 2, PmfEngine::Muselli).unwrap();
        assert_eq!(rep.factorial, vec![r(2, 1), r(4, 1)]);
        assert_eq!(rep.raw, vec![r(2, 1), r(6, 1)]);
        assert_eq!(rep.variance, r(2, 1));
        assert_eq!(rep.central[0], r(2, 1));
    }

    #[test]
    fn geometric_third_central_moment() {
        // geometric on {1,2,…}: skewness numerator E[(N-μ)^3] = q(1+q)/p^3
        let rep = moment_report(&exact(1, 3, 1), 3, PmfEngine::ClosedForm).unwrap();
        let (p, q) = (r(1, 3), r(2, 3));
        let expected = q.clone() * (r(1, 1) + q) / (p.clone() * p.clone() * p);
        assert_eq!(rep.central[1], expected);
    }

    #[test]
    fn float_report_matches_exact() {
        let ex = moment_report(&exact(2, 5, 3), 4, PmfEngine::Recurrence).unwrap();
        let fl = moment_report(&Params::new(0.4, 3).unwrap(), 4, PmfEngine::RootSum).unwrap();
        for (a, b) in ex.raw.iter().zip(&fl.raw) {
            let a = Real::to_f64(a);
            assert!(((a - b) / a).abs() < 1e-9);
        }
        let json = serde_json::to_value(&ex).unwrap();
        assert_eq!(json["factorial"].as_array().unwrap().len(), 4);
        assert_eq!(json["mode"], "exact");
        assert!(ex.to_text().contains("variance"));
        assert!(ex.to_csv().starts_with("order,factorial,raw,central\n1,"));
    }
}
