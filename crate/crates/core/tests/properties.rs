use geomk::moments::{factorial_moment, factorial_moment_closed, factorial_moment_muselli, mean, variance};
use geomk::numerics::{compensated_sum, gen_binomial, Mode, Real, Scalar};
use geomk::pmf::{build_table, pmf_closedform, pmf_muselli, pmf_recurrence, recurrence_table, PmfEngine, PmfEvaluator};
use geomk::roots::find_roots;
use geomk::simulate::{block_rng, sample_waiting_time};
use geomk::Params;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

fn fraction() -> impl Strategy<Value = BigRational> {
    (2i64..40).prop_flat_map(|b| (1..b).prop_map(move |a| BigRational::new(a.into(), b.into())))
}

fn exact_params(max_k: u32) -> impl Strategy<Value = Params<BigRational>> {
    (fraction(), 1..=max_k).prop_map(|(p, k)| Params::new(p, k).unwrap())
}

fn float_params(max_k: u32) -> impl Strategy<Value = Params<f64>> {
    (0.05f64..0.95, 1..=max_k).prop_map(|(p, k)| Params::new(p, k).unwrap())
}

proptest! {
    #[test]
    fn pascal_rule_holds_off_the_triangle(i in 1i64..120, dj in -3i64..125) {
        let j = dj.min(i + 3);
        prop_assert_eq!(gen_binomial(i, j), gen_binomial(i - 1, j - 1) + gen_binomial(i - 1, j));
    }

    #[test]
    fn shuffled_float_sums_agree(
        terms in prop::collection::vec(-1e6f64..1e6, 1..200),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = terms.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = f64::compensated_sum(terms.iter().copied());
        let b = f64::compensated_sum(shuffled.iter().copied());
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale, "{} vs {}", a, b);
    }

    #[test]
    fn exact_addition_is_associative_and_order_free(
        parts in prop::collection::vec((-50i64..50, 1i64..50), 3..12),
    ) {
        let scalars: Vec<Scalar> = parts.iter().map(|&(a, b)| Scalar::ratio(a, b)).collect();
        let (a, b, c) = (scalars[0].clone(), scalars[1].clone(), scalars[2].clone());
        let left = a.clone().checked_add(b.clone()).unwrap().checked_add(c.clone()).unwrap();
        let right = a.checked_add(b.checked_add(c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
        let mut reversed = scalars.clone();
        reversed.reverse();
        prop_assert_eq!(compensated_sum(&scalars, Mode::Exact).unwrap(), compensated_sum(&reversed, Mode::Exact).unwrap());
    }

    #[test]
    fn run_length_one_is_geometric(p in fraction(), n in 0u64..80) {
        let prm = Params::new(p.clone(), 1).unwrap();
        let q = BigRational::one() - &p;
        let expect = if n == 0 { BigRational::zero() } else { &p * num_traits::pow(q, n as usize - 1) };
        prop_assert_eq!(pmf_recurrence(&prm, n), expect.clone());
        prop_assert_eq!(pmf_muselli(&prm, n), expect.clone());
        prop_assert_eq!(pmf_closedform(&prm, n), expect);
    }

    #[test]
    fn support_and_plateau(prm in exact_params(8)) {
        let k = prm.k() as u64;
        for n in 0..k {
            prop_assert!(pmf_muselli(&prm, n).is_zero());
            prop_assert!(pmf_closedform(&prm, n).is_zero());
        }
        prop_assert_eq!(pmf_muselli(&prm, k), prm.pk());
        for n in k + 1..=2 * k {
            prop_assert_eq!(pmf_recurrence(&prm, n), prm.qpk());
            prop_assert_eq!(pmf_muselli(&prm, n), prm.qpk());
            prop_assert_eq!(pmf_closedform(&prm, n), prm.qpk());
        }
    }

    #[test]
    fn exact_engines_agree(prm in exact_params(6), n in 0u64..120) {
        let f = pmf_recurrence(&prm, n);
        prop_assert_eq!(pmf_muselli(&prm, n), f.clone());
        prop_assert_eq!(pmf_closedform(&prm, n), f);
    }

    #[test]
    fn pmf_positive_on_support(prm in exact_params(6)) {
        let k = prm.k() as usize;
        let table = recurrence_table(&prm, 150);
        prop_assert!(table[..k].iter().all(|f| f.is_zero()));
        prop_assert!(table[k..].iter().all(|f| *f > BigRational::zero()));
    }

    #[test]
    fn table_normalization(prm in float_params(6), extra in 0u64..300) {
        let n_max = prm.k() as u64 + extra;
        let t = build_table(&prm, PmfEngine::Recurrence, n_max).unwrap();
        let total = *t.cumulative.last().unwrap();
        prop_assert!(total <= 1.0 + 1e-12);
        if let Some(bound) = t.tail_bound {
            prop_assert!(total + bound >= 1.0 - 1e-12, "cumulative {} + bound {}", total, bound);
        }
    }

    #[test]
    fn float_engines_track_the_recurrence(prm in float_params(6), n in 0u64..60) {
        let f = pmf_recurrence(&prm, n);
        for engine in [PmfEngine::RootSum, PmfEngine::Muselli, PmfEngine::ClosedForm] {
            let ev = PmfEvaluator::new(prm.clone(), engine).unwrap();
            let out = ev.eval_detailed(n).unwrap();
            if !out.degraded {
                prop_assert!((out.value - f).abs() <= 1e-10, "{} at n={}: {} vs {}", engine, n, out.value, f);
            }
        }
    }

    #[test]
    fn root_symmetric_functions(prm in float_params(10)) {
        let set = find_roots(&prm).unwrap();
        let (p, q, k) = (*prm.p(), *prm.q(), prm.k() as i32);
        let sum: Complex64 = set.roots().iter().sum();
        let product: Complex64 = set.roots().iter().product();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        prop_assert!((sum - q).norm() < 1e-10);
        prop_assert!((product - sign * q * p.powi(k - 1)).norm() < 1e-10);
    }

    #[test]
    fn moment_routes_and_identities_exact(prm in exact_params(4), r in 1u64..5) {
        let a = factorial_moment(&prm, r, PmfEngine::Recurrence).unwrap();
        prop_assert!(a > BigRational::zero());
        prop_assert_eq!(factorial_moment_muselli(&prm, r).unwrap(), a.clone());
        prop_assert_eq!(factorial_moment_closed(&prm, r).unwrap(), a);
        let m1 = factorial_moment(&prm, 1, PmfEngine::Recurrence).unwrap();
        let m2 = factorial_moment(&prm, 2, PmfEngine::Recurrence).unwrap();
        prop_assert_eq!(mean(&prm), m1.clone());
        prop_assert_eq!(variance(&prm), &m2 - &m1 * &m1 + &m1);
    }

    #[test]
    fn float_moments_follow_exact(a in 1i64..20, k in 1u32..5) {
        let p = BigRational::new(a.into(), BigInt::from(21));
        let exact = Params::new(p, k).unwrap();
        let float = exact.to_float().unwrap();
        let me = Real::to_f64(&mean(&exact));
        let ve = Real::to_f64(&variance(&exact));
        prop_assert!(((mean(&float) - me) / me).abs() < 1e-12);
        prop_assert!(((variance(&float) - ve) / ve).abs() < 1e-9);
    }

    #[test]
    fn samples_never_precede_the_run(p in 0.3f64..0.95, k in 1u32..6, seed in any::<u64>()) {
        let prm = Params::new(p, k).unwrap();
        let mut rng = block_rng(seed, 0);
        for _ in 0..200 {
            if let Some(n) = sample_waiting_time(&prm, 100_000, &mut rng) {
                prop_assert!(n >= k as u64);
            }
        }
    }
}
