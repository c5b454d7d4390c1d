use std::fmt::Write as _;
use std::time::Instant;

use geomk::moments::{moment_report, MomentReport};
use geomk::pmf::{build_table, recurrence_table, PmfEngine, PmfEvaluator, PmfTable};
use geomk::roots::{certify_roots, find_roots, Certification};
use geomk::simulate::{simulate_and_check, GofReport, SimConfig, SimSummary};
use geomk::verify::{run_verify, VerifyConfig, VerifyReport};
use geomk::{parse_scalar, Mode, Params, Real, Scalar};
use num_rational::BigRational;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{BenchArgs, Dist, Failure, MomentsArgs, Outcome, PmfArgs, Render, RootsArgs, SampleArgs, TableArgs, VerifyArgs};

/// Plain decimal in the usual range, scientific notation outside it.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_scalar(s: &Scalar) -> String {
    match s {
        Scalar::Float(x) => fmt_f64(*x),
        Scalar::Exact(r) => r.to_string(),
    }
}

fn to_json<S: Serialize>(value: &S) -> Value {
    serde_json::to_value(value).expect("report types serialize infallibly")
}

fn parse_p(text: &str, mode: Mode) -> Result<Scalar, Failure> {
    parse_scalar(text, mode)
        .and_then(|s| s.to_mode(mode))
        .map_err(|e| Failure::usage(format!("--p: {e}")))
}

fn check_engine(engine: PmfEngine, mode: Mode) -> Result<(), Failure> {
    if engine.supports(mode) {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "--engine: `{engine}` is only available with --mode float"
        )))
    }
}

fn float_params(p: &str, k: u32) -> Result<Params<f64>, Failure> {
    let scalar = parse_p(p, Mode::Float)?;
    Ok(Params::<f64>::from_scalar(&scalar, k)?)
}

/// Runs `$body` with `$params` bound to `Params<f64>` or `Params<BigRational>`.
macro_rules! with_params {
    ($dist:expr, |$params:ident| $body:expr) => {{
        let mode: Mode = $dist.mode.into();
        let scalar = parse_p(&$dist.p, mode)?;
        match mode {
            Mode::Float => {
                let $params = Params::<f64>::from_scalar(&scalar, $dist.k)?;
                $body
            }
            Mode::Exact => {
                let $params = Params::<BigRational>::from_scalar(&scalar, $dist.k)?;
                $body
            }
        }
    }};
}

fn mode_of(dist: &Dist) -> Mode {
    dist.mode.into()
}

#[derive(Serialize)]
struct PmfValue {
    p: Scalar,
    k: u32,
    n: u64,
    engine: PmfEngine,
    mode: Mode,
    value: Scalar,
    decimal: f64,
    degraded: bool,
}

impl Render for PmfValue {
    fn json(&self) -> Value {
        to_json(self)
    }

    fn csv(&self) -> String {
        format!(
            "p,k,n,engine,mode,value,decimal,degraded\n{},{},{},{},{},{},{},{}\n",
            fmt_scalar(&self.p),
            self.k,
            self.n,
            self.engine,
            self.mode,
            fmt_scalar(&self.value),
            fmt_f64(self.decimal),
            self.degraded
        )
    }

    fn text(&self) -> String {
        let mut out = format!("{}\n", fmt_scalar(&self.value));
        if self.mode == Mode::Exact {
            let _ = writeln!(out, "decimal {}", fmt_f64(self.decimal));
        }
        let _ = writeln!(
            out,
            "p={} k={} n={} engine={} mode={}",
            fmt_scalar(&self.p),
            self.k,
            self.n,
            self.engine,
            self.mode
        );
        if self.degraded {
            out.push_str("warning: heavy cancellation in the alternating sum\n");
        }
        out
    }
}

pub fn pmf(args: &PmfArgs) -> Result<Outcome, Failure> {
    check_engine(args.engine, mode_of(&args.dist))?;
    let body = with_params!(args.dist, |params| {
        let evaluator = PmfEvaluator::new(params.clone(), args.engine)?;
        let detail = evaluator.eval_detailed(args.n)?;
        PmfValue {
            p: params.p().clone().into_scalar(),
            k: params.k(),
            n: args.n,
            engine: args.engine,
            mode: mode_of(&args.dist),
            decimal: detail.value.to_f64(),
            value: detail.value.into_scalar(),
            degraded: detail.degraded,
        }
    });
    Ok(Outcome { body: Box::new(body), passed: true })
}

struct TableOut<T>(PmfTable<T>);

impl<T: Real> Render for TableOut<T> {
    fn json(&self) -> Value {
        to_json(&self.0)
    }

    fn csv(&self) -> String {
        self.0.to_csv()
    }

    fn text(&self) -> String {
        let t = &self.0;
        let mut out = format!(
            "p={} k={} engine={} mode={}\n{:>6}  {:<24}  {:<24}\n",
            t.params.p(),
            t.params.k(),
            t.engine,
            T::MODE,
            "n",
            "f(n)",
            "cumulative"
        );
        for (n, (f, c)) in t.entries.iter().zip(&t.cumulative).enumerate() {
            let _ = writeln!(
                out,
                "{n:>6}  {:<24}  {:<24}",
                fmt_scalar(&f.clone().into_scalar()),
                fmt_scalar(&c.clone().into_scalar())
            );
        }
        if let Some(b) = t.tail_bound {
            let _ = writeln!(out, "mass beyond n={} is at most {}", t.n_max(), fmt_f64(b));
        }
        out
    }
}

pub fn table(args: &TableArgs) -> Result<Outcome, Failure> {
    check_engine(args.engine, mode_of(&args.dist))?;
    let body: Box<dyn Render> = with_params!(args.dist, |params| {
        Box::new(TableOut(build_table(&params, args.engine, args.n_max)?))
    });
    Ok(Outcome { body, passed: true })
}

struct MomentsOut<T>(MomentReport<T>);

impl<T: Real> Render for MomentsOut<T> {
    fn json(&self) -> Value {
        to_json(&self.0)
    }

    fn csv(&self) -> String {
        self.0.to_csv()
    }

    fn text(&self) -> String {
        self.0.to_text()
    }
}

pub fn moments(args: &MomentsArgs) -> Result<Outcome, Failure> {
    check_engine(args.engine, mode_of(&args.dist))?;
    let body: Box<dyn Render> = with_params!(args.dist, |params| {
        Box::new(MomentsOut(moment_report(&params, args.r_max, args.engine)?))
    });
    Ok(Outcome { body, passed: true })
}

struct RootsOut(Certification);

impl Render for RootsOut {
    fn json(&self) -> Value {
        to_json(&self.0)
    }

    fn csv(&self) -> String {
        let mut out = String::from("index,re,im,modulus,residual\n");
        for (i, ([re, im], res)) in self.0.roots.iter().zip(&self.0.residuals).enumerate() {
            let _ = writeln!(out, "{i},{re:e},{im:e},{:e},{res:e}", re.hypot(*im));
        }
        out
    }

    fn text(&self) -> String {
        let c = &self.0;
        let mut out = format!("p={} k={}{}\n", c.p, c.k, if c.degenerate { " (degenerate)" } else { "" });
        let _ = writeln!(out, "{:>3}  {:>24}  {:>24}  {:>22}  {:>9}", "#", "re", "im", "modulus", "residual");
        for (i, ([re, im], res)) in c.roots.iter().zip(&c.residuals).enumerate() {
            let mark = if i == c.principal_index { "*" } else { " " };
            let _ = writeln!(
                out,
                "{i:>2}{mark}  {re:>24.17e}  {im:>24.17e}  {:>22.17}  {res:>9.1e}",
                re.hypot(*im)
            );
        }
        let _ = writeln!(
            out,
            "max residual {:.1e}, min separation {:.3e}, max modulus {:.17}",
            c.max_residual, c.min_separation, c.max_modulus
        );
        for w in &c.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "certification {}", if c.passed { "PASS" } else { "FAIL" });
        out
    }
}

pub fn roots(args: &RootsArgs) -> Result<Outcome, Failure> {
    let params = float_params(&args.p, args.k)?;
    let set = find_roots(&params)?;
    let cert = certify_roots(&set, &params);
    let passed = cert.passed;
    Ok(Outcome { body: Box::new(RootsOut(cert)), passed })
}

struct VerifyOut(VerifyReport);

fn index_label(check: &str) -> &'static str {
    if check.starts_with("pmf") {
        "n"
    } else {
        "r"
    }
}

impl Render for VerifyOut {
    fn json(&self) -> Value {
        to_json(&self.0)
    }

    fn csv(&self) -> String {
        let mut out = String::from("check,passed,cases,failures,skipped,worst_deviation,failing_p,failing_k,failing_index\n");
        for c in &self.0.checks {
            let (p, k, idx) = match &c.first_failure {
                Some(f) => (f.p.clone(), f.k.to_string(), f.index.map(|i| i.to_string()).unwrap_or_default()),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e},{p},{k},{idx}",
                c.name, c.passed, c.cases, c.failures, c.skipped, c.worst_deviation
            );
        }
        out
    }

    fn text(&self) -> String {
        let r = &self.0;
        let mut out = format!(
            "mode={} p in {{{}}} k<={} n<={} r<={}\n",
            r.mode,
            r.p_grid.join(", "),
            r.k_max,
            r.n_max,
            r.r_max
        );
        for c in &r.checks {
            let _ = writeln!(
                out,
                "{}  {:<22} cases={:<6} worst={:.2e}{}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.worst_deviation,
                if c.skipped > 0 { format!(" skipped={} (precision degraded)", c.skipped) } else { String::new() }
            );
            if let Some(f) = &c.first_failure {
                let _ = writeln!(out, "      first failure: {}: {}", describe_case(c.name, f), f.detail);
            }
        }
        let _ = writeln!(out, "overall {}", if r.passed { "PASS" } else { "FAIL" });
        out
    }
}

fn describe_case(check: &str, f: &geomk::verify::CaseFailure) -> String {
    match f.index {
        Some(i) => format!("p={} k={} {}={i}", f.p, f.k, index_label(check)),
        None => format!("p={} k={}", f.p, f.k),
    }
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome, Failure> {
    let mode: Mode = args.mode.into();
    let p_grid = args
        .p_grid
        .iter()
        .map(|t| {
            parse_scalar(t, mode)
                .and_then(|s| s.to_mode(mode))
                .map_err(|e| Failure::usage(format!("--p-grid: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(engine) = args.inject_fault {
        check_engine(engine, mode)?;
    }
    let config = VerifyConfig {
        p_grid,
        k_max: args.k_max,
        n_max: args.n_max,
        r_max: args.r_max,
        mode,
        series: !args.no_series,
        fault: args.inject_fault,
    };
    let report = run_verify(&config).map_err(|e| match e {
        geomk::Error::Domain { name: "p_grid", reason } => Failure::usage(format!("--p-grid: {reason}")),
        other => other.into(),
    })?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        if let Some(f) = &c.first_failure {
            eprintln!("check {} failed at {}", c.name, describe_case(c.name, f));
        }
    }
    let passed = report.passed;
    Ok(Outcome { body: Box::new(VerifyOut(report)), passed })
}

struct SampleOut {
    summary: SimSummary,
    gof: GofReport,
    attempts: u32,
    histogram_csv: String,
}

impl Render for SampleOut {
    fn json(&self) -> Value {
        json!({
            "summary": to_json(&self.summary),
            "gof": to_json(&self.gof),
            "attempts": self.attempts,
        })
    }

    fn csv(&self) -> String {
        self.histogram_csv.clone()
    }

    fn text(&self) -> String {
        let s = &self.summary;
        let g = &self.gof;
        let mut out = format!(
            "p={} k={} trials={} seed={} attempts={}\n",
            s.p, s.k, s.trials, s.seed, self.attempts
        );
        let _ = writeln!(out, "mean     {:.6}  (analytic {:.6}, z = {:.2})", s.sample_mean, g.mean_analytic, g.mean_z);
        let _ = writeln!(
            out,
            "variance {:.6}  (analytic {:.6}, z = {:.2})",
            s.sample_variance, g.variance_analytic, g.variance_z
        );
        let _ = writeln!(
            out,
            "chi-square {:.3} on {} df, p-value {:.4}{}",
            g.chi_square,
            g.degrees_of_freedom,
            g.p_value,
            if g.flagged { " (flagged)" } else { "" }
        );
        if s.truncated_count > 0 {
            let _ = writeln!(out, "truncated trials {}", s.truncated_count);
        }
        if g.support_violations > 0 {
            let _ = writeln!(out, "support violations {}", g.support_violations);
        }
        let _ = writeln!(out, "goodness of fit {}", if g.passed { "PASS" } else { "FAIL" });
        out
    }
}

pub fn sample(args: &SampleArgs) -> Result<Outcome, Failure> {
    let params = float_params(&args.p, args.k)?;
    let config = SimConfig::new(params, args.trials, args.seed)?.with_max_steps(args.max_steps);
    let (summary, gof, attempts) = simulate_and_check(&config)?;
    let histogram_csv = summary.histogram_csv()?;
    let passed = gof.passed;
    Ok(Outcome {
        body: Box::new(SampleOut { summary, gof, attempts, histogram_csv }),
        passed,
    })
}

#[derive(Serialize)]
struct BenchRow {
    engine: PmfEngine,
    /// Root solve for the spectral engine, zero otherwise.
    setup_seconds: f64,
    eval_seconds: f64,
    total_seconds: f64,
    max_deviation: f64,
    degraded: u64,
}

#[derive(Serialize)]
struct BenchOut {
    p: f64,
    k: u32,
    n_max: u64,
    rows: Vec<BenchRow>,
}

impl Render for BenchOut {
    fn json(&self) -> Value {
        to_json(self)
    }

    fn csv(&self) -> String {
        let mut out = String::from("engine,setup_seconds,eval_seconds,total_seconds,max_deviation,degraded\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{}",
                r.engine, r.setup_seconds, r.eval_seconds, r.total_seconds, r.max_deviation, r.degraded
            );
        }
        out
    }

    fn text(&self) -> String {
        let mut out = format!("p={} k={} n<={}\n", self.p, self.k, self.n_max);
        let _ = writeln!(
            out,
            "{:<11} {:>12} {:>12} {:>12} {:>14} {:>9}",
            "engine", "setup [s]", "eval [s]", "total [s]", "max deviation", "degraded"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<11} {:>12.3e} {:>12.3e} {:>12.3e} {:>14.3e} {:>9}",
                r.engine.name(),
                r.setup_seconds,
                r.eval_seconds,
                r.total_seconds,
                r.max_deviation,
                r.degraded
            );
        }
        out
    }
}

pub fn bench(args: &BenchArgs) -> Result<Outcome, Failure> {
    let params = float_params(&args.p, args.k)?;
    let start = Instant::now();
    let reference = recurrence_table(&params, args.n_max);
    let reference_time = start.elapsed().as_secs_f64();

    let mut rows = Vec::with_capacity(args.engines.len());
    for &engine in &args.engines {
        let (setup_seconds, eval_seconds, values, degraded) = if engine == PmfEngine::Recurrence {
            (0.0, reference_time, reference.clone(), 0)
        } else {
            let start = Instant::now();
            let evaluator = PmfEvaluator::new(params.clone(), engine)?;
            let setup = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let mut values = Vec::with_capacity(reference.len());
            let mut degraded = 0;
            for n in 0..=args.n_max {
                let d = evaluator.eval_detailed(n)?;
                degraded += d.degraded as u64;
                values.push(d.value);
            }
            (setup, start.elapsed().as_secs_f64(), values, degraded)
        };
        let max_deviation = values
            .iter()
            .zip(&reference)
            .map(|(v, r)| (v - r).abs())
            .fold(0.0, |acc: f64, d| if acc.is_nan() || d.is_nan() { f64::NAN } else { acc.max(d) });
        rows.push(BenchRow {
            engine,
            setup_seconds,
            eval_seconds,
            total_seconds: setup_seconds + eval_seconds,
            max_deviation,
            degraded,
        });
    }
    Ok(Outcome {
        body: Box::new(BenchOut { p: *params.p(), k: params.k(), n_max: args.n_max, rows }),
        passed: true,
    })
}
