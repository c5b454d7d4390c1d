//! Monte Carlo sampling of the waiting time and goodness-of-fit checks
//! against the analytic pmf and moments.
//!
//! Random stream: trials are cut into blocks of [`BLOCK_TRIALS`]; block `b`
//! draws from `ChaCha8Rng::seed_from_u64(seed)` switched to stream `b`.
//! Each Bernoulli trial consumes one `u64` and succeeds when
//! `(x >> 11) · 2^-53 < p`. Results therefore do not depend on how many
//! worker threads process the blocks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::moments::{mean, moment_report, variance};
use crate::params::Params;
use crate::pmf::{recurrence_table, PmfEngine};

pub const BLOCK_TRIALS: u64 = 4096;
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;
/// Chi-square p-values below this are flagged.
pub const GOF_ALPHA: f64 = 1e-3;
/// Minimum expected count for a bin to stand on its own.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: Params<f64>,
    pub trials: u64,
    pub seed: u64,
    pub max_steps_per_trial: u64,
}

impl SimConfig {
    pub fn new(params: Params<f64>, trials: u64, seed: u64) -> Result<Self> {
        if trials < 1 {
            return Err(Error::domain("trials", "must be >= 1"));
        }
        Ok(SimConfig {
            params,
            trials,
            seed,
            max_steps_per_trial: DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_max_steps(mut self, cap: u64) -> Self {
        self.max_steps_per_trial = cap.max(1);
        self
    }
}

/// One Bernoulli trial: the top 53 bits of a `u64` as a uniform in [0, 1).
fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u < p
}

/// Runs trials until `k` consecutive successes and returns the index of the
/// trial that completes the run, or `None` once `cap` trials pass without
/// one.
pub fn sample_waiting_time<R: Rng>(params: &Params<f64>, cap: u64, rng: &mut R) -> Option<u64> {
    let (p, k) = (*params.p(), params.k() as u64);
    let mut run = 0;
    for step in 1..=cap {
        if bernoulli(rng, p) {
            run += 1;
            if run == k {
                return Some(step);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// The stream for block `b` of a run seeded with `seed`.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub p: f64,
    pub k: u32,
    pub seed: u64,
    pub trials: u64,
    pub sample_mean: f64,
    /// Unbiased (n - 1 denominator); zero for a single completed trial.
    pub sample_variance: f64,
    /// Waiting time → count, over completed trials only.
    pub histogram: BTreeMap<u64, u64>,
    /// Trials that hit `max_steps_per_trial`.
    pub truncated_count: u64,
}

impl SimSummary {
    pub fn completed(&self) -> u64 {
        self.trials - self.truncated_count
    }

    /// `n,count,frequency,analytic` with the analytic pmf from the
    /// recurrence.
    pub fn histogram_csv(&self) -> Result<String> {
        let params = Params::new(self.p, self.k)?;
        let n_max = self.histogram.keys().next_back().copied().unwrap_or(0);
        let analytic = recurrence_table(&params, n_max);
        let mut out = String::from("n,count,frequency,analytic\n");
        for (&n, &count) in &self.histogram {
            out.push_str(&format!(
                "{n},{count},{:e},{:e}\n",
                count as f64 / self.trials as f64,
                analytic[n as usize]
            ));
        }
        Ok(out)
    }
}

pub fn run_simulation(config: &SimConfig) -> SimSummary {
    let blocks = config.trials.div_ceil(BLOCK_TRIALS);
    let (histogram, truncated) = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(config.seed, b);
            let start = b * BLOCK_TRIALS;
            let end = (start + BLOCK_TRIALS).min(config.trials);
            let mut hist = BTreeMap::new();
            let mut truncated = 0u64;
            for _ in start..end {
                match sample_waiting_time(&config.params, config.max_steps_per_trial, &mut rng) {
                    Some(n) => *hist.entry(n).or_insert(0u64) += 1,
                    None => truncated += 1,
                }
            }
            (hist, truncated)
        })
        .reduce(
            || (BTreeMap::new(), 0),
            |(mut a, ta), (b, tb)| {
                for (n, c) in b {
                    *a.entry(n).or_insert(0) += c;
                }
                (a, ta + tb)
            },
        );

    let completed: u64 = histogram.values().sum();
    let (sum, sum_sq) = histogram.iter().fold((0u128, 0u128), |(s, s2), (&n, &c)| {
        (s + n as u128 * c as u128, s2 + (n as u128) * (n as u128) * c as u128)
    });
    let (sample_mean, sample_variance) = if completed == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let m = sum as f64 / completed as f64;
        let v = if completed > 1 {
            // exact integer numerator: n Σx² - (Σx)²
            let num = completed as u128 * sum_sq - sum * sum;
            num as f64 / (completed as f64 * (completed - 1) as f64)
        } else {
            0.0
        };
        (m, v)
    };

    SimSummary {
        p: *config.params.p(),
        k: config.params.k(),
        seed: config.seed,
        trials: config.trials,
        sample_mean,
        sample_variance,
        histogram,
        truncated_count: truncated,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofBin {
    /// First waiting time in the bin; the last bin is open-ended.
    pub n_from: u64,
    pub n_to: Option<u64>,
    pub observed: u64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub p: f64,
    pub k: u32,
    pub trials: u64,
    pub bins: Vec<GofBin>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub mean_analytic: f64,
    pub mean_z: f64,
    pub variance_analytic: f64,
    pub variance_z: f64,
    /// Observations below `k`, which the distribution cannot produce.
    pub support_violations: u64,
    /// `p_value < GOF_ALPHA` (soft statistical signal).
    pub flagged: bool,
    /// No support violation and not flagged.
    pub passed: bool,
}

/// Chi-square over bins with expected count ≥ [`MIN_EXPECTED`] (the tail
/// beyond the last such bin, truncated trials included, is pooled), plus
/// z-scores of the sample mean and variance.
pub fn gof_report(summary: &SimSummary, params: &Params<f64>) -> Result<GofReport> {
    if summary.p != *params.p() || summary.k != params.k() {
        return Err(Error::domain(
            "params",
            format!(
                "summary was simulated at p={}, k={} but compared against p={}, k={}",
                summary.p,
                summary.k,
                params.p(),
                params.k()
            ),
        ));
    }
    let k = params.k() as u64;
    let trials = summary.trials as f64;
    let support_violations: u64 = summary.histogram.range(..k).map(|(_, c)| *c).sum();

    // extend the analytic table until the expected counts drop below the
    // threshold past the mode
    let mut n_max = (k * 8).max(64);
    let table = loop {
        let table = recurrence_table(params, n_max);
        let last = *table.last().unwrap();
        if last * trials < MIN_EXPECTED || n_max > 50_000_000 {
            break table;
        }
        n_max *= 2;
    };

    let mut bins = Vec::new();
    let mut covered_obs = 0u64;
    let mut covered_exp = 0.0;
    for (n, &f) in table.iter().enumerate().skip(k as usize) {
        let expected = f * trials;
        if expected < MIN_EXPECTED {
            break;
        }
        let observed = summary.histogram.get(&(n as u64)).copied().unwrap_or(0);
        bins.push(GofBin {
            n_from: n as u64,
            n_to: Some(n as u64),
            observed,
            expected,
        });
        covered_obs += observed;
        covered_exp += expected;
    }
    let tail_from = bins.last().map(|b| b.n_from + 1).unwrap_or(k);
    let tail_obs = summary.trials - support_violations - covered_obs;
    let tail_exp = (trials - covered_exp).max(0.0);
    if tail_exp >= MIN_EXPECTED || bins.is_empty() {
        bins.push(GofBin {
            n_from: tail_from,
            n_to: None,
            observed: tail_obs,
            expected: tail_exp,
        });
    } else {
        let last = bins.last_mut().unwrap();
        last.n_to = None;
        last.observed += tail_obs;
        last.expected += tail_exp;
    }

    let chi_square: f64 = bins
        .iter()
        .filter(|b| b.expected > 0.0)
        .map(|b| {
            let d = b.observed as f64 - b.expected;
            d * d / b.expected
        })
        .sum();
    let degrees_of_freedom = bins.len().saturating_sub(1);
    let p_value = if degrees_of_freedom == 0 {
        1.0
    } else {
        ChiSquared::new(degrees_of_freedom as f64)
            .map(|d| d.sf(chi_square))
            .unwrap_or(f64::NAN)
    };

    let mu = mean(params);
    let var = variance(params);
    let completed = summary.completed() as f64;
    let mean_z = (summary.sample_mean - mu) / (var / completed).sqrt();
    let report4 = moment_report(params, 4, PmfEngine::Recurrence)?;
    let mu4 = report4.central[2];
    let var_of_var = (mu4 - var * var * (completed - 3.0) / (completed - 1.0)) / completed;
    let variance_z = if completed > 1.0 && var_of_var > 0.0 {
        (summary.sample_variance - var) / var_of_var.sqrt()
    } else {
        f64::NAN
    };

    let flagged = !(p_value >= GOF_ALPHA);
    Ok(GofReport {
        p: *params.p(),
        k: params.k(),
        trials: summary.trials,
        bins,
        chi_square,
        degrees_of_freedom,
        p_value,
        mean_analytic: mu,
        mean_z,
        variance_analytic: var,
        variance_z,
        support_violations,
        flagged,
        passed: support_violations == 0 && !flagged,
    })
}

/// Simulates and tests; on a flagged chi-square, reruns once with
/// `seed + 1` before reporting. Returns the final attempt and how many
/// attempts were made.
pub fn simulate_and_check(config: &SimConfig) -> Result<(SimSummary, GofReport, u32)> {
    let summary = run_simulation(config);
    let report = gof_report(&summary, &config.params)?;
    if !report.flagged || report.support_violations > 0 {
        return Ok((summary, report, 1));
    }
    let retry = SimConfig {
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    };
    let summary = run_simulation(&retry);
    let report = gof_report(&summary, &retry.params)?;
    Ok((summary, report, 2))
}
