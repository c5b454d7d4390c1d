//! Validated distribution parameters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Mode, Real, Scalar};

/// Float-mode tolerance for declaring `p = k/(k+1)`.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// How the degeneracy flag was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Detection {
    Exact,
    Tolerance,
}

/// Whether `p = k/(k+1)`, the point where the generic root-sum weights of
/// the pmf become 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DegeneracyFlag {
    pub is_degenerate: bool,
    pub detection_mode: Detection,
}

/// Success probability `p`, failure probability `q = 1 - p` and run length
/// `k` of one geometric distribution of order `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    p: T,
    q: T,
    k: u32,
    degeneracy: DegeneracyFlag,
}

impl<T> Params<T> {
    pub fn p(&self) -> &T {
        &self.p
    }

    pub fn q(&self) -> &T {
        &self.q
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn degeneracy(&self) -> DegeneracyFlag {
        self.degeneracy
    }

    pub fn is_degenerate(&self) -> bool {
        self.degeneracy.is_degenerate
    }
}

impl<T: Real> Params<T> {
    /// Requires `0 < p < 1` and `k >= 1`.
    pub fn new(p: T, k: u32) -> Result<Self> {
        if p <= T::zero() {
            return Err(Error::domain("p", format!("must be > 0, got {p}")));
        }
        if p >= T::one() {
            return Err(Error::domain("p", format!("must be < 1, got {p}")));
        }
        if k < 1 {
            return Err(Error::domain("k", "must be >= 1"));
        }
        let q = T::one() - p.clone();
        let kk = T::from_u64(k as u64);
        let degeneracy = match T::MODE {
            Mode::Exact => DegeneracyFlag {
                is_degenerate: p.clone() * (kk.clone() + T::one()) == kk,
                detection_mode: Detection::Exact,
            },
            Mode::Float => {
                let threshold = k as f64 / (k as f64 + 1.0);
                DegeneracyFlag {
                    is_degenerate: (p.to_f64() - threshold).abs() < DEGENERACY_TOL,
                    detection_mode: Detection::Tolerance,
                }
            }
        };
        Ok(Params {
            p,
            q,
            k,
            degeneracy,
        })
    }

    /// Builds from a parsed scalar, converting it into this backing first.
    pub fn from_scalar(p: &Scalar, k: u32) -> Result<Self> {
        Params::new(T::from_scalar(p)?, k)
    }

    /// `p^k`.
    pub fn pk(&self) -> T {
        self.p.powu(self.k)
    }

    /// `q·p^k`, the constant in the factorial-moment denominator.
    pub fn qpk(&self) -> T {
        self.q.clone() * self.pk()
    }

    /// The same distribution in binary64. Fails only when rounding pushes
    /// `p` onto 0 or 1.
    pub fn to_float(&self) -> Result<Params<f64>> {
        Params::new(self.p.to_f64(), self.k)
    }
}

/// Float/exact dispatch for callers that pick the mode at run time.
pub fn make_params(p: &Scalar, k: u32) -> Result<Params<Scalar>> {
    match p.mode() {
        Mode::Float => {
            let inner = Params::<f64>::new(p.to_f64(), k)?;
            Ok(Params {
                p: p.clone(),
                q: Scalar::Float(*inner.q()),
                k,
                degeneracy: inner.degeneracy(),
            })
        }
        Mode::Exact => {
            let inner = Params::new(p.as_exact().cloned().unwrap(), k)?;
            Ok(Params {
                p: p.clone(),
                q: Scalar::Exact(inner.q().clone()),
                k,
                degeneracy: inner.degeneracy(),
            })
        }
    }
}

impl Params<Scalar> {
    /// `q·p^k` in the scalar's own mode.
    pub fn qpk_scalar(&self) -> Scalar {
        match &self.p {
            Scalar::Float(p) => Scalar::Float(Params::new(*p, self.k).unwrap().qpk()),
            Scalar::Exact(p) => Scalar::Exact(Params::new(p.clone(), self.k).unwrap().qpk()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn half_two_is_not_degenerate() {
        let params = Params::new(r(1, 2), 2).unwrap();
        assert_eq!(params.q(), &r(1, 2));
        assert!(!params.is_degenerate());
        assert_eq!(params.degeneracy().detection_mode, Detection::Exact);
    }

    #[test]
    fn half_one_is_degenerate() {
        assert!(Params::new(r(1, 2), 1).unwrap().is_degenerate());
        assert!(Params::new(r(2, 3), 2).unwrap().is_degenerate());
        assert!(Params::new(0.5f64, 1).unwrap().is_degenerate());
        assert!(Params::new(2.0f64 / 3.0, 2).unwrap().is_degenerate());
        assert!(!Params::new(2.0f64 / 3.0 + 1e-9, 2).unwrap().is_degenerate());
    }

    #[test]
    fn bounds_are_open() {
        for bad in [0.0, 1.0, -0.1, 1.5] {
            match Params::new(bad, 3) {
                Err(Error::Domain { name, .. }) => assert_eq!(name, "p"),
                other => panic!("{bad}: {other:?}"),
            }
        }
        match Params::new(0.5, 0) {
            Err(Error::Domain { name, .. }) => assert_eq!(name, "k"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qpk_values() {
        assert_eq!(Params::new(r(1, 2), 2).unwrap().qpk(), r(1, 8));
        assert_eq!(Params::new(r(1, 2), 1).unwrap().qpk(), r(1, 4));
        assert_eq!(Params::new(r(1, 3), 1).unwrap().qpk(), r(2, 9));
    }

    #[test]
    fn p_plus_q_is_one() {
        let exact = Params::new(r(3, 7), 4).unwrap();
        assert_eq!(exact.p() + exact.q(), r(1, 1));
        for p in [0.1, 0.2, 0.3, 0.7, 0.9, 1e-9, 1.0 - 1e-9] {
            let f = Params::new(p, 2).unwrap();
            assert!((f.p() + f.q() - 1.0).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn scalar_dispatch() {
        let params = make_params(&Scalar::ratio(1, 2), 2).unwrap();
        assert_eq!(params.qpk_scalar(), Scalar::ratio(1, 8));
        assert_eq!(params.q(), &Scalar::ratio(1, 2));
        let params = make_params(&Scalar::Float(0.5), 1).unwrap();
        assert!(params.is_degenerate());
        assert_eq!(params.qpk_scalar(), Scalar::Float(0.25));
        assert!(make_params(&Scalar::ratio(1, 1), 3).is_err());
    }
}
