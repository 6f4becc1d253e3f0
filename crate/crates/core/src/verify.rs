//! Self-check suite behind `banzip verify`.
//!
//! Each check prints its name, the values it computed, its tolerance, and
//! PASS or FAIL.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coder::{quantize_probs, RangeDecoder, RangeEncoder, TOTAL};
use crate::gaussnet::{Architecture, Predictor, PredictorWeights};
use crate::gradcheck::{central_diff, max_rel_error};
use crate::oracle::{self, GaussianMixture, Loss, TinyProblem};
use crate::seqmodel::{Context, Sample};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub values: String,
    pub tolerance: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {}  [tolerance {}]", self.name, self.values, self.tolerance)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

struct Sizes {
    mixtures: usize,
    problems: usize,
    mc_draws: usize,
    coder_symbols: usize,
}

/// Runs the suite. `quick` shrinks sample counts so it finishes in seconds.
pub fn run(quick: bool) -> Report {
    let s = if quick {
        Sizes { mixtures: 200, problems: 12, mc_draws: 50_000, coder_symbols: 20_000 }
    } else {
        Sizes { mixtures: 1000, problems: 100, mc_draws: 400_000, coder_symbols: 1_000_000 }
    };
    let checks = vec![
        jensen_closed_form(),
        jensen_single_component(),
        jensen_sweep(s.mixtures),
        predictive_range(s.problems),
        conjugate(s.problems.min(20)),
        covariance_identity(s.problems),
        covariance_approximation(s.problems),
        monotonicity(s.problems),
        mirror(s.problems.min(20)),
        monte_carlo(s.mc_draws),
        quantization(s.mixtures * 10),
        range_coder(s.coder_symbols),
        predictor_gradient(),
    ];
    Report { checks }
}

fn check(name: &'static str, values: String, tolerance: impl Into<String>, pass: bool) -> Check {
    Check { name, values, tolerance: tolerance.into(), pass }
}

fn jensen_closed_form() -> Check {
    let g = GaussianMixture::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]).expect("valid mixture");
    let j = oracle::jensen_gap(&g);
    let want = (0.5 * 0.5f64.exp() + 0.5 * 1.5f64.exp(), 1f64.exp());
    let err = (j.lhs - want.0).abs().max((j.rhs - want.1).abs());
    check("jensen_closed_form", format!("lhs {:.4} rhs {:.4}", j.lhs, j.rhs), "1e-12", err < 1e-12 && j.lhs > j.rhs)
}

fn jensen_single_component() -> Check {
    let g = GaussianMixture::new(vec![1.0], vec![0.7], vec![1.3]).expect("valid mixture");
    let j = oracle::jensen_gap(&g);
    check("jensen_single_component", format!("lhs {} rhs {}", j.lhs, j.rhs), "exact", j.lhs == j.rhs)
}

fn jensen_sweep(n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut full_violations = 0;
    for _ in 0..n {
        let k = rng.random_range(1..=5);
        let j = oracle::jensen_gap(&GaussianMixture::random(&mut rng, k));
        worst = worst.min(j.lhs - j.rhs);
        if j.lhs < j.rhs_full_variance {
            full_violations += 1;
        }
    }
    check(
        "jensen_sweep",
        format!("{n} mixtures, min lhs-rhs {worst:.3e}, full-variance form violated {full_violations}x (not asserted)"),
        "lhs >= rhs - 1e-12",
        worst >= -1e-12,
    )
}

fn problems(seed: u64, n: usize, scale: f64, correlated: bool) -> Vec<TinyProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let dim = 1 + k % 3;
            if correlated {
                oracle::correlated_problem(&mut rng, dim, scale)
            } else {
                oracle::random_problem(&mut rng, dim, scale)
            }
        })
        .collect()
}

fn predictive_range(n: usize) -> Check {
    let mut errors = 0;
    let mut bad = 0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for p in problems(3, n, 1.0, false) {
        match oracle::exact_predictive(&p) {
            Ok(v) => {
                lo = lo.min(v);
                hi = hi.max(v);
                if !(v > 0.0 && v <= 1.0) {
                    bad += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }
    check(
        "predictive_in_unit_interval",
        format!("{n} problems, range [{lo:.4}, {hi:.4}], gate failures {errors}"),
        format!("(0, 1], grid gate {:e}", oracle::GATE_TOLERANCE),
        bad == 0 && errors == 0,
    )
}

fn conjugate(n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let m = rng.random_range(2..=oracle::MAX_TRAIN);
        let train: Vec<Loss> = (0..m)
            .map(|_| Loss::Quadratic { a: rng.random_range(6.0..9.0), center: vec![rng.random_range(-0.8..0.8)] })
            .collect();
        let test = Loss::Quadratic { a: rng.random_range(0.5..4.0), center: vec![rng.random_range(-1.0..1.0)] };
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
        let total: f64 = raw.iter().sum();
        let rho = raw.iter().map(|r| r * m as f64 / total).collect();
        let p = TinyProblem::new(1, train, test, rho).expect("valid problem");
        let diff = match (oracle::exact_predictive(&p), oracle::conjugate_predictive(&p)) {
            (Ok(a), Ok(b)) => (a - b).abs(),
            _ => f64::INFINITY,
        };
        worst = worst.max(diff);
    }
    check("conjugate_closed_form", format!("{n} problems, max |diff| {worst:.2e}"), "1e-8", worst < 1e-8)
}

fn covariance_identity(n: usize) -> Check {
    let mut worst = 0.0f64;
    for p in problems(4, n, 1.0, false) {
        let r = match oracle::drho_derivative(&p, 0) {
            Ok(d) => (d.exact_fd - d.exact_covariance).abs() / d.exact_covariance.abs().max(1e-3),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(r);
    }
    check("drho_exact_covariance", format!("{n} problems, max rel error {worst:.2e}"), "1e-6", worst < 1e-6)
}

fn covariance_approximation(n: usize) -> Check {
    let mut worst = 0.0f64;
    for p in problems(5, n, 0.01, true) {
        let r = match oracle::drho_derivative(&p, 0) {
            Ok(d) => (d.approx_covariance - d.exact_fd).abs() / d.exact_fd.abs(),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(r);
    }
    check(
        "drho_covariance_approx",
        format!("{n} correlated problems at loss scale 0.01, max rel error {worst:.4}"),
        "0.05",
        worst <= 0.05,
    )
}

fn monotonicity(n: usize) -> Check {
    let mut agree = 0;
    for p in problems(6, n, 0.1, true) {
        if let Ok(d) = oracle::drho_derivative(&p, 0) {
            if d.approx_covariance > 0.0 && d.exact_fd > 0.0 {
                agree += 1;
            }
        }
    }
    check("drho_monotonicity", format!("{agree}/{n} positive covariance and derivative"), "all", agree == n)
}

fn mirror(n: usize) -> Check {
    let mut flipped = 0;
    for p in problems(8, n, 0.01, true) {
        let pair = oracle::drho_derivative(&p, 0)
            .and_then(|d| Ok((d, oracle::drho_derivative(&oracle::mirrored_test(&p)?, 0)?)));
        if let Ok((d, m)) = pair {
            if d.exact_fd.signum() == -m.exact_fd.signum() {
                flipped += 1;
            }
        }
    }
    check("drho_mirror_sign_flip", format!("{flipped}/{n} sign flips"), "all", flipped == n)
}

fn monte_carlo(draws: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = oracle::random_problem(&mut rng, 2, 0.5);
    let (exact, mc) = match (oracle::exact_predictive(&p), oracle::mc_predictive(&p, draws, 9)) {
        (Ok(e), Ok(m)) => (e, m),
        _ => return check("monte_carlo_vs_quadrature", "oracle error".into(), "5 std errors", false),
    };
    let z = (mc.value - exact).abs() / mc.std_error;
    check(
        "monte_carlo_vs_quadrature",
        format!("quadrature {exact:.6} mc {:.6} ({z:.2} std errors)", mc.value),
        "5 std errors",
        z < 5.0,
    )
}

fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sharp = rng.random_range(0.0..12.0);
    let raw: Vec<f64> = (0..256).map(|_| (sharp * rng.random::<f64>()).exp().powi(2)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn quantization(n: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bad = 0;
    let mut min = u32::MAX;
    for _ in 0..n {
        let q = quantize_probs(&random_probs(&mut rng));
        let sum: u32 = q.counts().iter().sum();
        min = min.min(q.min_count());
        if sum != TOTAL || q.min_count() < 1 {
            bad += 1;
        }
    }
    check("quantized_pmf", format!("{n} pmfs, bad sums {bad}, min count {min}"), "sum 65536, min >= 1", bad == 0)
}

fn range_coder(symbols: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tables: Vec<_> = (0..32).map(|_| quantize_probs(&random_probs(&mut rng))).collect();
    let mut msg = Vec::with_capacity(symbols);
    let mut ideal = 0.0;
    let mut enc = RangeEncoder::new();
    for n in 0..symbols {
        let q = &tables[n % tables.len()];
        // draw from the table so the stream is typical
        let target = rng.random_range(0..TOTAL);
        let sym = q.symbol_at(target);
        ideal += q.bits(sym);
        enc.encode(q, sym);
        msg.push(sym);
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes);
    let decoded: Option<Vec<u8>> = (0..symbols).map(|n| dec.decode(&tables[n % tables.len()]).ok()).collect();
    let exact = decoded.as_deref() == Some(&msg[..]) && dec.finish().is_ok();
    let bound = ((ideal + 64.0) / 8.0).ceil() as usize;
    check(
        "range_coder",
        format!("{symbols} symbols, {} bytes, bound {bound}, round trip {}", bytes.len(), if exact { "exact" } else { "BROKEN" }),
        "ideal + 64 bits",
        exact && bytes.len() <= bound,
    )
}

fn predictor_gradient() -> Check {
    let arch = Architecture { context_len: 3, latent_dim: 2, embed_dim: 3, hidden: 5 };
    let predictor = Predictor::new(&arch);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let w: Vec<f64> = (0..arch.layout().len).map(|_| 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let ctx: Vec<u8> = (0..3).map(|_| rng.random()).collect();
        let sample = Sample { context: Context::new(ctx.clone()).expect("length 3"), target: rng.random(), index: 0 };
        let Ok((_, grad)) = predictor.loss_and_grad(&sample, &PredictorWeights(w.clone())) else {
            return check("predictor_gradient", "forward failed".into(), "1e-4", false);
        };
        let idx: Vec<usize> = arch.layout().active_ranges(&ctx).into_iter().flatten().step_by(5).collect();
        let loss = |x: &[f64]| {
            predictor
                .predict(&ctx, &PredictorWeights(x.to_vec()))
                .map(|p| -p.probs()[sample.target as usize].ln())
                .unwrap_or(f64::NAN)
        };
        let fd = central_diff(loss, &w, &idx, 1e-5);
        let an: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        worst = worst.max(max_rel_error(&an, &fd));
    }
    check("predictor_gradient", format!("10 instances, max rel error {worst:.2e}"), "1e-4", worst < 1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let report = run(true);
        assert!(report.all_pass(), "{report}");
        assert!(report.to_string().lines().all(|l| l.starts_with("PASS") || l.ends_with("0 failed")));
    }

    #[test]
    fn failing_check_is_reported() {
        let mut r = Report::default();
        r.checks.push(check("x", "1".into(), "0", false));
        assert!(!r.all_pass());
        assert!(r.to_string().starts_with("FAIL x"));
    }
}
