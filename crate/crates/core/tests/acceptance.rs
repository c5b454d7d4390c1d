//! Acceptance gate. Each test prints one `PASS`/`FAIL` line to stderr,
//! which the harness does not capture.

use std::io::Write;

use geomk::moments::{factorial_moment, factorial_moment_closed, factorial_moment_muselli, mean, variance};
use geomk::pmf::{pgf_eval, pmf_closedform, pmf_muselli, recurrence_table, PmfEngine, PmfEvaluator};
use geomk::roots::{certify_roots, find_roots};
use geomk::simulate::{simulate_and_check, SimConfig};
use geomk::verify::{series_comparisons, SERIES_RTOL};
use geomk::Params;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;

const EXACT_GRID: [(i64, i64); 4] = [(1, 3), (1, 2), (2, 3), (3, 4)];

fn rat(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

fn exact(a: i64, b: i64, k: u32) -> Params<BigRational> {
    Params::new(rat(a, b), k).unwrap()
}

fn exact_cases(k_max: u32) -> Vec<Params<BigRational>> {
    EXACT_GRID
        .iter()
        .flat_map(|&(a, b)| (1..=k_max).map(move |k| exact(a, b, k)))
        .collect()
}

fn fact(r: u64) -> BigRational {
    BigRational::from_integer(geomk::numerics::factorial(r))
}

fn report(id: u32, title: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("acceptance {id:>2} PASS  {title}: {detail}"),
        Err(detail) => format!("acceptance {id:>2} FAIL  {title}: {detail}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(detail) = outcome {
        panic!("criterion {id} failed: {detail}");
    }
}

fn first_error(results: Vec<Result<u64, String>>) -> Result<u64, String> {
    results.into_iter().try_fold(0, |acc, r| r.map(|n| acc + n))
}

#[test]
fn c01_exact_cross_engine_pmf() {
    let outcome = first_error(
        exact_cases(6)
            .par_iter()
            .map(|prm| {
                let table = recurrence_table(prm, 200);
                for (n, f) in table.iter().enumerate() {
                    let n = n as u64;
                    let m = pmf_muselli(prm, n);
                    let c = pmf_closedform(prm, n);
                    if &m != f || &c != f {
                        return Err(format!(
                            "p={} k={} n={n}: recurrence {f}, muselli {m}, closedform {c}",
                            prm.p(),
                            prm.k()
                        ));
                    }
                }
                Ok(table.len() as u64)
            })
            .collect(),
    );
    report(1, "exact cross-engine pmf equality", outcome.map(|n| format!("{n} values agree")));
}

#[test]
fn c02_series_oracle() {
    let outcome = first_error(
        exact_cases(6)
            .par_iter()
            .map(|prm| {
                let cmp = series_comparisons(prm, 8).map_err(|e| e.to_string())?;
                for c in &cmp {
                    let bounded = c.tail_bound < SERIES_RTOL * c.moment;
                    if !c.passed || !bounded || c.gap < 0.0 {
                        return Err(format!("p={} k={} r={}: {c:?}", prm.p(), prm.k(), c.r));
                    }
                }
                Ok(cmp.len() as u64)
            })
            .collect(),
    );
    report(
        2,
        "factorial moments equal truncated series within tail bound",
        outcome.map(|n| format!("{n} (p,k,r) cases, 0 <= gap <= bound < 1e-15 relative")),
    );
}

#[test]
fn c03_three_route_moments() {
    let exact_outcome = first_error(
        exact_cases(6)
            .par_iter()
            .map(|prm| {
                for r in 1..=8 {
                    let a = factorial_moment(prm, r, PmfEngine::Recurrence).map_err(|e| e.to_string())?;
                    let b = factorial_moment_muselli(prm, r).map_err(|e| e.to_string())?;
                    let c = factorial_moment_closed(prm, r).map_err(|e| e.to_string())?;
                    if a != b || a != c {
                        return Err(format!("exact p={} k={} r={r}: {a} / {b} / {c}", prm.p(), prm.k()));
                    }
                }
                Ok(8)
            })
            .collect(),
    );
    let float_outcome = exact_outcome.and_then(|n| {
        let mut worst = 0.0f64;
        for &(a, b) in &EXACT_GRID {
            for k in 1..=6 {
                let prm = Params::new(a as f64 / b as f64, k).unwrap();
                for r in 1..=8 {
                    let x = factorial_moment(&prm, r, PmfEngine::Recurrence).unwrap();
                    let y = factorial_moment_muselli(&prm, r).unwrap();
                    let z = factorial_moment_closed(&prm, r).unwrap();
                    let dev = ((x - y).abs().max((x - z).abs())) / x;
                    worst = worst.max(dev);
                    if !(dev <= 1e-9) {
                        return Err(format!("float p={a}/{b} k={k} r={r}: {x:e} / {y:e} / {z:e}"));
                    }
                }
            }
        }
        Ok(format!("{n} exact cases bit-identical, float worst relative {worst:.1e}"))
    });
    report(3, "three-route factorial moments", float_outcome);
}

#[test]
fn c04_mean() {
    let outcome = (|| {
        for prm in exact_cases(6) {
            let m1 = factorial_moment(&prm, 1, PmfEngine::Recurrence).map_err(|e| e.to_string())?;
            if m1 != mean(&prm) {
                return Err(format!("p={} k={}: μ_(1) {m1} vs mean {}", prm.p(), prm.k(), mean(&prm)));
            }
        }
        for (a, b, expect) in [(1, 2, 6), (1, 3, 12)] {
            let got = mean(&exact(a, b, 2));
            if got != rat(expect, 1) {
                return Err(format!("p={a}/{b} k=2: mean {got}, expected {expect}"));
            }
        }
        Ok("identity exact on grid; spot values 6 and 12".to_string())
    })();
    report(4, "closed-form mean", outcome);
}

#[test]
fn c05_variance() {
    let outcome = (|| {
        for prm in exact_cases(6) {
            let m1 = factorial_moment(&prm, 1, PmfEngine::Recurrence).map_err(|e| e.to_string())?;
            let m2 = factorial_moment(&prm, 2, PmfEngine::Recurrence).map_err(|e| e.to_string())?;
            let lhs = &m2 - &m1 * &m1 + &m1;
            if lhs != variance(&prm) {
                return Err(format!("p={} k={}: {lhs} vs {}", prm.p(), prm.k(), variance(&prm)));
            }
        }
        let prm = exact(1, 2, 2);
        let m2 = factorial_moment(&prm, 2, PmfEngine::Recurrence).unwrap();
        if variance(&prm) != rat(22, 1) || m2 != rat(52, 1) {
            return Err(format!("p=1/2 k=2: variance {}, μ_(2) {m2}", variance(&prm)));
        }
        Ok("identity exact on grid; variance 22 and μ_(2) 52".to_string())
    })();
    report(5, "closed-form variance", outcome);
}

#[test]
fn c06_root_certification() {
    let outcome = (|| {
        let mut worst = 0.0f64;
        for p in [0.2, 0.5, 0.8] {
            for k in 1..=8 {
                let prm = Params::new(p, k).unwrap();
                let set = find_roots(&prm).map_err(|e| format!("p={p} k={k}: {e}"))?;
                let cert = certify_roots(&set, &prm);
                let ok = cert.passed
                    && cert.positive_real_count == 1
                    && cert.max_modulus < 1.0
                    && cert.min_separation > 0.0
                    && cert.residuals.iter().all(|&r| r <= 1e-12)
                    && cert.roots.len() == k as usize;
                if !ok {
                    return Err(format!("p={p} k={k}: {cert:?}"));
                }
                worst = worst.max(cert.max_residual);
            }
        }
        let set = find_roots(&Params::new(0.5, 2).unwrap()).unwrap();
        let s5 = 5f64.sqrt();
        for (i, expect) in [(1.0 + s5) / 4.0, (1.0 - s5) / 4.0].into_iter().enumerate() {
            let d = (set.roots()[i] - Complex64::new(expect, 0.0)).norm();
            if d > 1e-12 {
                return Err(format!("p=1/2 k=2 root {i}: {} vs {expect}", set.roots()[i]));
            }
        }
        Ok(format!("24 root sets certified, worst residual {worst:.1e}; quadratic roots match"))
    })();
    report(6, "root certification", outcome);
}

#[test]
fn c07_spectral_engine() {
    let outcome = (|| {
        let mut ps: Vec<(String, Params<f64>, u32)> = Vec::new();
        for k in 1..=8u32 {
            for p in [0.2, 1.0 / 3.0, 0.5, 0.75, 0.8, 0.95] {
                ps.push((format!("{p}"), Params::new(p, k).unwrap(), k));
            }
            let degenerate = exact(k as i64, k as i64 + 1, k);
            ps.push((format!("{}/{}", k, k + 1), degenerate.to_float().unwrap(), k));
        }
        let mut worst = 0.0f64;
        let mut degenerate_runs = 0;
        for (label, prm, k) in &ps {
            let evaluator = PmfEvaluator::new(prm.clone(), PmfEngine::RootSum).map_err(|e| e.to_string())?;
            if evaluator.root_set().unwrap().is_degenerate() {
                degenerate_runs += 1;
            }
            let table = recurrence_table(prm, 100);
            for (n, f) in table.iter().enumerate() {
                let v = evaluator.eval(n as u64).map_err(|e| e.to_string())?;
                let d = (v - f).abs();
                worst = worst.max(d);
                if !(d <= 1e-10) {
                    return Err(format!("p={label} k={k} n={n}: rootsum {v:e}, recurrence {f:e}"));
                }
            }
        }
        for (a, b, k) in [(1, 2, 1), (2, 3, 2)] {
            let prm = exact(a, b, k).to_float().unwrap();
            let ev = PmfEvaluator::new(prm, PmfEngine::RootSum).unwrap();
            if !ev.root_set().unwrap().is_degenerate() {
                return Err(format!("p={a}/{b} k={k} did not take the degenerate branch"));
            }
        }
        Ok(format!(
            "{} parameter sets ({degenerate_runs} degenerate), worst deviation {worst:.1e}",
            ps.len()
        ))
    })();
    report(7, "spectral pmf engine", outcome);
}

#[test]
fn c08_geometric_reduction() {
    let outcome = (|| {
        for &(a, b) in &EXACT_GRID {
            let prm = exact(a, b, 1);
            let p = rat(a, b);
            let q = BigRational::one() - &p;
            let table = recurrence_table(&prm, 200);
            let mut expect = BigRational::zero();
            for (n, f) in table.iter().enumerate() {
                if n >= 1 {
                    expect = if n == 1 { p.clone() } else { expect * &q };
                }
                let n = n as u64;
                if f != &expect || pmf_muselli(&prm, n) != expect || pmf_closedform(&prm, n) != expect {
                    return Err(format!("p={a}/{b} n={n}: {f} vs {expect}"));
                }
            }
            for r in 1..=10u64 {
                let want = fact(r) * num_traits::pow(q.clone(), r as usize - 1) / num_traits::pow(p.clone(), r as usize);
                let got = [
                    factorial_moment(&prm, r, PmfEngine::Recurrence).unwrap(),
                    factorial_moment_muselli(&prm, r).unwrap(),
                    factorial_moment_closed(&prm, r).unwrap(),
                ];
                if got.iter().any(|g| g != &want) {
                    return Err(format!("p={a}/{b} r={r}: {got:?} vs {want}"));
                }
            }
        }
        Ok("pmf and μ_(r), r <= 10, bit-exact for all engines".to_string())
    })();
    report(8, "k = 1 reduction", outcome);
}

#[test]
fn c09_monte_carlo() {
    let outcome = (|| {
        let cfg = SimConfig::new(Params::new(0.5, 2).unwrap(), 1_000_000, 0x6765_6f6d).map_err(|e| e.to_string())?;
        let (summary, gof, attempts) = simulate_and_check(&cfg).map_err(|e| e.to_string())?;
        let half_width = 3.0 * (22.0f64 / 1e6).sqrt();
        let mean_ok = (summary.sample_mean - 6.0).abs() <= half_width;
        let detail = format!(
            "mean {:.5} (6 ± {half_width:.4}), chi-square p-value {:.3} over {} bins, attempts {attempts}",
            summary.sample_mean,
            gof.p_value,
            gof.bins.len()
        );
        if mean_ok && !gof.flagged && gof.passed && summary.truncated_count == 0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    report(9, "Monte Carlo consistency", outcome);
}

#[test]
fn c10_pgf_identity() {
    let points = [(1, 10), (1, 2), (9, 10)];
    let outcome = first_error(
        exact_cases(6)
            .par_iter()
            .map(|prm| {
                for (a, b) in points {
                    let s_f = a as f64 / b as f64;
                    let n_stop = ((1e-13 * (1.0 - s_f)).ln() / s_f.ln()).ceil() as u64;
                    let bound = s_f.powi(n_stop as i32 + 1) / (1.0 - s_f);
                    let s = rat(a, b);
                    let mut partial = BigRational::zero();
                    let mut s_pow = BigRational::one();
                    for f in recurrence_table(prm, n_stop) {
                        partial += f * &s_pow;
                        s_pow *= &s;
                    }
                    let value = pgf_eval(prm, &s).map_err(|e| e.to_string())?;
                    let gap = &value - &partial;
                    let gap_f = num_traits::ToPrimitive::to_f64(&gap).unwrap();
                    if gap < BigRational::zero() || gap_f > bound {
                        return Err(format!("p={} k={} s={a}/{b}: gap {gap_f:e}, bound {bound:e}", prm.p(), prm.k()));
                    }
                }
                let at_one = pgf_eval(prm, &BigRational::one()).map_err(|e| e.to_string())?;
                if !at_one.is_one() {
                    return Err(format!("p={} k={}: pgf(1) = {at_one}", prm.p(), prm.k()));
                }
                Ok(points.len() as u64 + 1)
            })
            .collect(),
    );
    report(10, "pgf identity", outcome.map(|n| format!("{n} evaluations within tail bound, pgf(1) = 1 exactly")));
}
