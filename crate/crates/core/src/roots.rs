//! Roots of the auxiliary polynomial
//!
//! ```text
//! A(z) = z^k - q z^(k-1) - q p z^(k-2) - ... - q p^(k-1)
//! ```
//!
//! the characteristic polynomial of the pmf recurrence (`z = 1/s` relative
//! to the pgf argument). Its roots are distinct and lie strictly inside
//! the unit disc; exactly one of them, the principal root, is positive real.
//! Every root satisfies `λ^k (1 - λ) = q p^k`, since
//! `(z - p) A(z) = z^(k+1) - z^k + q p^k`.
//!
//! The principal root is bisected on (0, 1). The other `k - 1` roots come
//! from Aberth iteration with the principal root held fixed. Every root is
//! Newton-polished afterwards.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Params;

pub const MAX_ITERATIONS: usize = 500;
/// Convergence target for `|A(λ)|` relative to `Σ|c_i||λ|^i`.
pub const POLISH_TOL: f64 = 1e-14;
pub const RESIDUAL_TOL: f64 = 1e-12;
pub const SEPARATION_TOL: f64 = 1e-9;
/// Moduli in `[1 - MODULUS_WARN_MARGIN, 1)` pass with a warning.
pub const MODULUS_WARN_MARGIN: f64 = 1e-9;

/// Coefficients of `A`, leading coefficient first.
pub fn aux_poly_coefficients(params: &Params<f64>) -> Vec<f64> {
    let (p, q) = (*params.p(), *params.q());
    let mut coeffs = Vec::with_capacity(params.k() as usize + 1);
    coeffs.push(1.0);
    let mut pow = 1.0;
    for _ in 0..params.k() {
        coeffs.push(-q * pow);
        pow *= p;
    }
    coeffs
}

/// `A(z)` by Horner's rule.
pub fn aux_poly_eval(params: &Params<f64>, z: Complex64) -> Complex64 {
    horner(&aux_poly_coefficients(params), z)
}

/// `A(z)` at a real point in either scalar backing.
pub fn aux_poly_eval_real<T: crate::numerics::Real>(params: &Params<T>, z: &T) -> T {
    let mut acc = T::one();
    let mut p_pow = T::one();
    for _ in 0..params.k() {
        acc = acc * z.clone() - params.q().clone() * p_pow.clone();
        p_pow = p_pow * params.p().clone();
    }
    acc
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Value, derivative and the backward-error scale `Σ|c_i||z|^i`.
fn horner_with_derivative(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64, f64) {
    let mut value = Complex64::new(0.0, 0.0);
    let mut deriv = Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    let r = z.norm();
    for &c in coeffs {
        deriv = deriv * z + value;
        value = value * z + c;
        scale = scale * r + c.abs();
    }
    (value, deriv, scale)
}

/// `|λ^k (1 - λ) - q p^k|`.
pub fn identity_residual(params: &Params<f64>, lambda: Complex64) -> f64 {
    let lhs = lambda.powu(params.k()) * (1.0 - lambda);
    (lhs - params.qpk()).norm()
}

/// The `k` roots of `A`, principal root first, the rest ordered by real part
/// then imaginary part, both descending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSet {
    roots: Vec<Complex64>,
    principal_index: usize,
    residuals: Vec<f64>,
    degenerate: bool,
}

impl RootSet {
    /// Assembles a root set without any solving; residuals are recomputed.
    /// Useful for certifying externally supplied or perturbed roots.
    pub fn from_parts(params: &Params<f64>, roots: Vec<Complex64>, principal_index: usize) -> Self {
        let residuals = roots.iter().map(|&z| identity_residual(params, z)).collect();
        RootSet {
            roots,
            principal_index,
            residuals,
            degenerate: params.is_degenerate(),
        }
    }

    pub fn roots(&self) -> &[Complex64] {
        &self.roots
    }

    pub fn principal_index(&self) -> usize {
        self.principal_index
    }

    pub fn principal(&self) -> Complex64 {
        self.roots[self.principal_index]
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Largest root modulus; the pmf tail decays like this to the power n.
    pub fn spectral_radius(&self) -> f64 {
        self.roots.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Weights `w_j` of the spectral pmf
    /// `f(n) = p^k/(k+1) · Σ_j w_j λ_j^(n-k)`.
    ///
    /// Generic case: `w_j = (λ_j - p)/(λ_j - k/(k+1))`. At `p = k/(k+1)` the
    /// principal weight is 0/0 and the weights are `2, 1, 1, …`.
    pub fn weights(&self, params: &Params<f64>) -> Result<Vec<Complex64>> {
        let k = params.k() as f64;
        let threshold = k / (k + 1.0);
        let p = *params.p();
        let principal_gap = (self.principal() - threshold).norm();
        if self.degenerate {
            if principal_gap > 1e-6 {
                return Err(Error::Consistency(format!(
                    "degenerate flag set but principal root {} is {principal_gap:e} from k/(k+1)",
                    self.principal()
                )));
            }
            return Ok((0..self.roots.len())
                .map(|j| {
                    if j == self.principal_index {
                        Complex64::new(2.0, 0.0)
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect());
        }
        let weights: Vec<Complex64> = self
            .roots
            .iter()
            .map(|&z| (z - p) / (z - threshold))
            .collect();
        if weights.iter().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
            return Err(Error::Consistency(
                "non-degenerate parameters produced a singular root-sum weight".into(),
            ));
        }
        Ok(weights)
    }
}

/// Solves `A(z) = 0`.
pub fn find_roots(params: &Params<f64>) -> Result<RootSet> {
    let coeffs = aux_poly_coefficients(params);
    let k = params.k() as usize;
    let principal = principal_root(&coeffs);
    if k == 1 {
        return Ok(RootSet::from_parts(params, vec![Complex64::new(principal, 0.0)], 0));
    }

    let pinned = Complex64::new(principal, 0.0);
    let radius = params.p().max(*params.q());
    let mut others: Vec<Complex64> = (1..k)
        .map(|j| {
            let theta = std::f64::consts::TAU * j as f64 / k as f64 + 0.4;
            Complex64::from_polar(radius, theta)
        })
        .collect();

    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut worst = 0.0f64;
        let mut largest_step = 0.0f64;
        for i in 0..others.len() {
            let z = others[i];
            let (value, deriv, scale) = horner_with_derivative(&coeffs, z);
            worst = worst.max(value.norm() / scale);
            if value.norm() == 0.0 {
                continue;
            }
            let newton = value / deriv;
            let repulsion: Complex64 = others
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &w)| 1.0 / (z - w))
                .sum::<Complex64>()
                + 1.0 / (z - pinned);
            let step = newton / (1.0 - newton * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                others[i] = z - step;
                largest_step = largest_step.max(step.norm() / z.norm().max(f64::MIN_POSITIVE));
            }
        }
        if worst <= 8.0 * f64::EPSILON || largest_step <= 4.0 * f64::EPSILON {
            break;
        }
    }

    for z in others.iter_mut() {
        *z = newton_polish(&coeffs, *z);
    }
    symmetrize_conjugates(&mut others);
    others.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));

    let mut roots = Vec::with_capacity(k);
    roots.push(pinned);
    roots.extend(others);

    let backward: Vec<f64> = roots
        .iter()
        .map(|&z| {
            let (v, _, s) = horner_with_derivative(&coeffs, z);
            v.norm() / s
        })
        .collect();
    let worst_backward = backward.iter().copied().fold(0.0, f64::max);
    let set = RootSet::from_parts(params, roots, 0);
    let worst_residual = set.residuals.iter().copied().fold(0.0, f64::max);
    if worst_backward > POLISH_TOL || worst_residual > RESIDUAL_TOL || worst_residual.is_nan() {
        return Err(Error::NoConvergence {
            iterations,
            worst_residual,
            residuals: set.residuals.clone(),
        });
    }
    Ok(set)
}

/// Bisection on (0, 1) where `A(0) < 0 < A(1)`, then Newton polishing.
fn principal_root(coeffs: &[f64]) -> f64 {
    let eval = |x: f64| coeffs.iter().fold(0.0, |acc, &c| acc * x + c);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let polished = newton_polish(coeffs, Complex64::new(x, 0.0)).re;
    if polished > 0.0 && polished < 1.0 && eval(polished).abs() <= eval(x).abs() {
        polished
    } else {
        x
    }
}

fn newton_polish(coeffs: &[f64], mut z: Complex64) -> Complex64 {
    for _ in 0..4 {
        let (v, d, _) = horner_with_derivative(coeffs, z);
        if v.norm() == 0.0 || d.norm() == 0.0 {
            break;
        }
        let next = z - v / d;
        let (nv, _, _) = horner_with_derivative(coeffs, next);
        if nv.norm() >= v.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Real coefficients mean complex roots come in exact conjugate pairs;
/// snap numerically real roots onto the axis and make pairs exact.
fn symmetrize_conjugates(roots: &mut [Complex64]) {
    for z in roots.iter_mut() {
        if z.im.abs() <= 1e-10 * z.norm() {
            z.im = 0.0;
        }
    }
    let upper: Vec<usize> = (0..roots.len()).filter(|&i| roots[i].im > 0.0).collect();
    let mut lower: Vec<usize> = (0..roots.len()).filter(|&i| roots[i].im < 0.0).collect();
    if upper.len() != lower.len() {
        return;
    }
    for i in upper {
        let target = roots[i].conj();
        let (pos, &j) = lower
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (roots[*a.1] - target)
                    .norm()
                    .total_cmp(&(roots[*b.1] - target).norm())
            })
            .expect("paired counts");
        roots[j] = target;
        lower.swap_remove(pos);
    }
}

/// Evidence that a root set has the properties the moment derivation uses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certification {
    pub k: u32,
    pub p: f64,
    pub roots: Vec<[f64; 2]>,
    pub principal_index: usize,
    pub degenerate: bool,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub min_separation: f64,
    pub positive_real_count: usize,
    pub max_modulus: f64,
    pub warnings: Vec<String>,
    pub passed: bool,
}

/// Checks the root-set invariants: one positive real root (the principal
/// one), all moduli below 1, pairwise separation above [`SEPARATION_TOL`],
/// and `λ^k(1-λ) = q p^k` within [`RESIDUAL_TOL`] for every root.
pub fn certify_roots(set: &RootSet, params: &Params<f64>) -> Certification {
    let roots = set.roots();
    let residuals: Vec<f64> = roots.iter().map(|&z| identity_residual(params, z)).collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let mut min_separation = f64::INFINITY;
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            min_separation = min_separation.min((roots[i] - roots[j]).norm());
        }
    }
    let is_positive_real = |z: &Complex64| z.re > 0.0 && z.im.abs() <= 1e-10 * z.norm();
    let positive_real_count = roots.iter().filter(|z| is_positive_real(z)).count();
    let max_modulus = set.spectral_radius();

    let mut warnings = Vec::new();
    let mut passed = true;
    if positive_real_count != 1 || !is_positive_real(&set.principal()) {
        passed = false;
        warnings.push(format!(
            "expected exactly one positive real root at the principal index, found {positive_real_count}"
        ));
    }
    if max_modulus >= 1.0 {
        passed = false;
        warnings.push(format!("root modulus {max_modulus} is not below 1"));
    } else if max_modulus >= 1.0 - MODULUS_WARN_MARGIN {
        warnings.push(format!("root modulus {max_modulus} is within {MODULUS_WARN_MARGIN:e} of 1"));
    }
    if min_separation <= SEPARATION_TOL {
        passed = false;
        warnings.push(format!("roots closer than {SEPARATION_TOL:e}: {min_separation:e}"));
    }
    if max_residual > RESIDUAL_TOL || max_residual.is_nan() {
        passed = false;
        warnings.push(format!("identity residual {max_residual:e} exceeds {RESIDUAL_TOL:e}"));
    }

    Certification {
        k: params.k(),
        p: *params.p(),
        roots: roots.iter().map(|z| [z.re, z.im]).collect(),
        principal_index: set.principal_index(),
        degenerate: set.is_degenerate(),
        residuals,
        max_residual,
        min_separation: if roots.len() < 2 { f64::INFINITY } else { min_separation },
        positive_real_count,
        max_modulus,
        warnings,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64, k: u32) -> Params<f64> {
        Params::new(p, k).unwrap()
    }

    #[test]
    fn linear_case_root_is_q() {
        let set = find_roots(&params(0.3, 1)).unwrap();
        assert_eq!(set.roots().len(), 1);
        assert!((set.principal().re - 0.7).abs() < 1e-15);
        assert_eq!(aux_poly_eval(&params(0.5, 1), Complex64::new(0.5, 0.0)).norm(), 0.0);
    }

    #[test]
    fn quadratic_roots() {
        let prm = params(0.5, 2);
        let set = find_roots(&prm).unwrap();
        let s5 = 5f64.sqrt();
        assert!((set.roots()[0] - Complex64::new((1.0 + s5) / 4.0, 0.0)).norm() < 1e-12);
        assert!((set.roots()[1] - Complex64::new((1.0 - s5) / 4.0, 0.0)).norm() < 1e-12);
        let l0 = set.principal().re;
        assert!((l0 * l0 * (1.0 - l0) - 0.125).abs() <= 1e-12);
        let cert = certify_roots(&set, &prm);
        assert!(cert.passed, "{cert:?}");
        assert!((cert.min_separation - s5 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn a_at_one_is_pk() {
        for k in 1..=8 {
            for p in [0.2, 0.5, 0.8] {
                let prm = params(p, k);
                let v = aux_poly_eval(&prm, Complex64::new(1.0, 0.0));
                assert!((v.re - p.powi(k as i32)).abs() < 1e-15);
            }
        }
        let two = aux_poly_eval(&params(0.5, 2), Complex64::new(1.0, 0.0));
        assert_eq!(two.re, 0.25);
    }

    #[test]
    fn exact_a_at_one() {
        use num_rational::BigRational;
        let prm = Params::new(BigRational::new(1.into(), 3.into()), 4).unwrap();
        let one = BigRational::from_integer(1.into());
        assert_eq!(aux_poly_eval_real(&prm, &one), prm.pk());
    }

    #[test]
    fn perturbed_root_fails_certification() {
        let prm = params(0.5, 2);
        let set = find_roots(&prm).unwrap();
        let mut roots = set.roots().to_vec();
        roots[0] += 1e-6;
        let bad = RootSet::from_parts(&prm, roots, 0);
        let cert = certify_roots(&bad, &prm);
        assert!(!cert.passed);
        // d/dz z^2(1-z) = 2z - 3z^2 at the principal root
        let l0 = set.principal().re;
        let slope = (2.0 * l0 - 3.0 * l0 * l0).abs();
        assert!((cert.residuals[0] / (slope * 1e-6) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn vieta_relations() {
        for k in 1..=10u32 {
            for p in [0.05, 0.2, 0.5, 0.8, 0.95] {
                let prm = params(p, k);
                let set = find_roots(&prm).unwrap();
                let sum: Complex64 = set.roots().iter().sum();
                let prod: Complex64 = set.roots().iter().product();
                let q = 1.0 - p;
                assert!((sum - q).norm() < 1e-12, "k={k} p={p}");
                let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
                let expected = sign * q * p.powi(k as i32 - 1);
                assert!((prod - expected).norm() < 1e-12, "k={k} p={p}");
            }
        }
    }

    #[test]
    fn ordering_and_real_root_structure() {
        for k in 2..=9u32 {
            let set = find_roots(&params(0.4, k)).unwrap();
            let rest = &set.roots()[1..];
            for w in rest.windows(2) {
                assert!(w[0].re > w[1].re || (w[0].re == w[1].re && w[0].im > w[1].im));
            }
            // one negative real root for even k, none for odd k
            let negative_real = rest.iter().filter(|z| z.im == 0.0 && z.re < 0.0).count();
            assert_eq!(negative_real, if k % 2 == 0 { 1 } else { 0 }, "k={k}");
        }
    }

    #[test]
    fn degenerate_weights() {
        let prm = params(2.0 / 3.0, 2);
        let set = find_roots(&prm).unwrap();
        assert!((set.principal().re - 2.0 / 3.0).abs() < 1e-12);
        let w = set.weights(&prm).unwrap();
        assert_eq!(w, vec![Complex64::new(2.0, 0.0), Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn wide_grid_certifies() {
        for k in 1..=16u32 {
            for i in 1..20 {
                let p = i as f64 / 20.0;
                let prm = params(p, k);
                // 1 - λ_0 is of order q p^k; below ~1e-13 it is not
                // resolvable in binary64
                if prm.qpk() < 1e-13 {
                    continue;
                }
                let set = find_roots(&prm).unwrap();
                let cert = certify_roots(&set, &prm);
                assert!(cert.passed, "p={p} k={k}: {:?}", cert.warnings);
            }
        }
    }
}
