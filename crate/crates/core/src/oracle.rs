//! Brute-force checks on tiny problems: exact Bayesian predictive integrals
//! by grid quadrature, the importance-derivative identity, and the sharpened
//! Jensen inequality for Gaussian mixtures.
//!
//! Weights live in at most three dimensions with a standard normal prior. The
//! grid spans [-3, 3] per axis and is integrated with end-corrected trapezoid
//! weights (uniform inside, fourth order at the edges); every reported value is computed at step `h`, recomputed at `2h`,
//! and rejected when halving the step moved it by more than [`GATE_TOLERANCE`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::error::{BanError, Result};

pub const GRID_HALF_WIDTH: f64 = 3.0;
pub const MAX_STEP: f64 = 0.05;
pub const MAX_QUADRATURE_DIM: usize = 3;
pub const MAX_MC_DIM: usize = 6;
pub const MAX_TRAIN: usize = 6;
pub const GATE_TOLERANCE: f64 = 1e-6;
/// Step in ρᵢ for the finite-difference derivative of ln predictive.
pub const RHO_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub enum Loss {
    Constant(f64),
    /// ½·a·|w − center|²
    Quadratic { a: f64, center: Vec<f64> },
    /// ln(1 + exp(−y·⟨x, w⟩))
    Logistic { x: Vec<f64>, y: f64 },
    /// ⟨g, w⟩ + c
    Affine { g: Vec<f64>, c: f64 },
    /// 2·pivot − inner
    Mirror { inner: Box<Loss>, pivot: f64 },
}

impl Loss {
    pub fn eval(&self, w: &[f64]) -> f64 {
        match self {
            Loss::Constant(c) => *c,
            Loss::Quadratic { a, center } => 0.5 * a * w.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>(),
            Loss::Logistic { x, y } => {
                let m = -y * dot(x, w);
                // stable softplus
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            }
            Loss::Affine { g, c } => dot(g, w) + c,
            Loss::Mirror { inner, pivot } => 2.0 * pivot - inner.eval(w),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Loss::Constant(_) => None,
            Loss::Quadratic { center, .. } => Some(center.len()),
            Loss::Logistic { x, .. } => Some(x.len()),
            Loss::Affine { g, .. } => Some(g.len()),
            Loss::Mirror { inner, .. } => inner.dim(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weight dimension, grid step, explicit per-sample losses, and importance factors.
/// Every loss is multiplied by `scale` when evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyProblem {
    pub dim: usize,
    pub step: f64,
    pub train: Vec<Loss>,
    pub test: Loss,
    pub rho: Vec<f64>,
    pub scale: f64,
}

impl TinyProblem {
    pub fn new(dim: usize, train: Vec<Loss>, test: Loss, rho: Vec<f64>) -> Result<Self> {
        let p = TinyProblem { dim, step: MAX_STEP, train, test, rho, scale: 1.0 };
        p.validate(MAX_MC_DIM)?;
        Ok(p)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Self {
        self.rho = rho;
        self
    }

    fn validate(&self, max_dim: usize) -> Result<()> {
        let bad = |m: String| Err(BanError::InvalidConfig(m));
        if self.dim == 0 || self.dim > max_dim {
            return bad(format!("weight dimension {} outside 1..={max_dim}", self.dim));
        }
        if self.train.len() > MAX_TRAIN {
            return bad(format!("{} training losses, at most {MAX_TRAIN}", self.train.len()));
        }
        if self.rho.len() != self.train.len() {
            return Err(BanError::DimensionMismatch { expected: self.train.len(), got: self.rho.len() });
        }
        if self.rho.iter().any(|r| !r.is_finite() || *r < 0.0) || !(self.scale.is_finite() && self.scale >= 0.0) {
            return bad("importance factors and scale must be finite and nonnegative".into());
        }
        for l in self.train.iter().chain(std::iter::once(&self.test)) {
            if let Some(d) = l.dim() {
                if d != self.dim {
                    return Err(BanError::DimensionMismatch { expected: self.dim, got: d });
                }
            }
        }
        // whole cells at both h and 2h
        let cells = 2.0 * GRID_HALF_WIDTH / self.step;
        if !(self.step > 0.0 && self.step <= MAX_STEP) || (cells - cells.round()).abs() > 1e-9 || cells.round() as u64 % 2 != 0 {
            return bad(format!("grid step {} must be at most {MAX_STEP} and split [-3, 3] into an even cell count", self.step));
        }
        Ok(())
    }

    fn losses(&self, w: &[f64], train: &mut [f64]) -> f64 {
        for (t, l) in train.iter_mut().zip(&self.train) {
            *t = self.scale * l.eval(w);
        }
        self.scale * self.test.eval(w)
    }
}

/// Sums of `f(train losses, test loss)` weighted by the unnormalized posterior
/// ∏ e^{−ρᵢlᵢ}·P₀ on the grid. The sums share an unknown common factor, so only
/// their ratios mean anything.
fn integrate<const K: usize>(p: &TinyProblem, step: f64, f: impl Fn(&[f64], f64) -> [f64; K]) -> [f64; K] {
    let n = (2.0 * GRID_HALF_WIDTH / step).round() as usize;
    let nodes: Vec<f64> = (0..=n).map(|j| -GRID_HALF_WIDTH + j as f64 * step).collect();
    const EDGE: [f64; 4] = [17.0 / 48.0, 59.0 / 48.0, 43.0 / 48.0, 49.0 / 48.0];
    let quad_w: Vec<f64> = (0..=n).map(|j| EDGE.get(j.min(n - j)).copied().unwrap_or(1.0)).collect();
    let mut idx = vec![0usize; p.dim];
    let mut w = vec![0.0; p.dim];
    let mut train = vec![0.0; p.train.len()];
    let mut sums = [0.0; K];
    let mut shift = f64::NEG_INFINITY;
    loop {
        let mut qw = 1.0;
        let mut norm2 = 0.0;
        for (k, &j) in idx.iter().enumerate() {
            w[k] = nodes[j];
            qw *= quad_w[j];
            norm2 += nodes[j] * nodes[j];
        }
        let test = p.losses(&w, &mut train);
        let lw = -0.5 * norm2 - dot(&p.rho, &train);
        if lw > shift {
            let r = (shift - lw).exp();
            sums.iter_mut().for_each(|s| *s *= r);
            shift = lw;
        }
        let weight = qw * (lw - shift).exp();
        if weight > 0.0 {
            let v = f(&train, test);
            for k in 0..K {
                sums[k] += weight * v[k];
            }
        }
        // odometer over the tensor grid
        let mut axis = 0;
        loop {
            if axis == p.dim {
                return sums;
            }
            idx[axis] += 1;
            if idx[axis] <= n {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

fn gate(coarse: f64, fine: f64) -> Result<()> {
    let rel = ((fine - coarse) / fine).abs();
    if !(rel < GATE_TOLERANCE) {
        return Err(BanError::QuadratureNonConvergence { rel_change: rel });
    }
    Ok(())
}

fn predictive_at(p: &TinyProblem, step: f64) -> f64 {
    let [z, num] = integrate(p, step, |_, lt| [1.0, (-lt).exp()]);
    num / z
}

/// ⟨P(a|s,w)⟩ under the importance-weighted posterior, as a ratio of grid
/// quadratures, after the halving gate.
pub fn exact_predictive(p: &TinyProblem) -> Result<f64> {
    p.validate(MAX_QUADRATURE_DIM)?;
    let coarse = predictive_at(p, 2.0 * p.step);
    let fine = predictive_at(p, p.step);
    gate(coarse, fine)?;
    Ok(fine)
}

/// Posterior expectation of the (scaled) test loss.
pub fn posterior_test_loss(p: &TinyProblem) -> Result<f64> {
    p.validate(MAX_QUADRATURE_DIM)?;
    let [z, m] = integrate(p, p.step, |_, lt| [1.0, lt]);
    Ok(m / z)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrhoDerivative {
    /// Central difference of ln ⟨P(a|s,w)⟩ in ρᵢ.
    pub exact_fd: f64,
    /// ⟨lᵢ l⟩ − ⟨lᵢ⟩⟨l⟩ under the posterior.
    pub approx_covariance: f64,
    /// −Cov(lᵢ, e^{−l}) / ⟨e^{−l}⟩, the exact derivative in closed form.
    pub exact_covariance: f64,
    pub predictive: f64,
}

fn drho_at(p: &TinyProblem, i: usize, step: f64) -> DrhoDerivative {
    let d = RHO_STEP;
    let s = integrate(p, step, |tr, lt| {
        let li = tr[i];
        let et = (-lt).exp();
        let up = (-d * li).exp();
        let down = (d * li).exp();
        [1.0, et, up, up * et, down, down * et, li, lt, li * lt, li * et]
    });
    let [z, num, zu, nu, zd, nd, mi, mt, mit, mie] = s;
    let exact_fd = ((nu / zu).ln() - (nd / zd).ln()) / (2.0 * d);
    let approx_covariance = mit / z - (mi / z) * (mt / z);
    let pe = num / z;
    let exact_covariance = -(mie / z - (mi / z) * pe) / pe;
    DrhoDerivative { exact_fd, approx_covariance, exact_covariance, predictive: pe }
}

/// Derivative of ln predictive with respect to ρᵢ, by finite differences and
/// by posterior covariances. Gated on the predictive.
pub fn drho_derivative(p: &TinyProblem, i: usize) -> Result<DrhoDerivative> {
    p.validate(MAX_QUADRATURE_DIM)?;
    if i >= p.train.len() {
        return Err(BanError::DimensionMismatch { expected: p.train.len(), got: i });
    }
    let coarse = drho_at(p, i, 2.0 * p.step);
    let fine = drho_at(p, i, p.step);
    gate(coarse.predictive, fine.predictive)?;
    Ok(fine)
}

/// Copy of `p` whose test loss is reflected about its posterior mean.
pub fn mirrored_test(p: &TinyProblem) -> Result<TinyProblem> {
    let pivot = posterior_test_loss(p)? / p.scale;
    let mut q = p.clone();
    q.test = Loss::Mirror { inner: Box::new(p.test.clone()), pivot };
    Ok(q)
}

/// Conjugate-Gaussian answer for `dim = 1` with quadratic training and test
/// losses (and no truncation of the prior).
pub fn conjugate_predictive(p: &TinyProblem) -> Result<f64> {
    let quad = |l: &Loss| match l {
        Loss::Quadratic { a, center } if center.len() == 1 => Some((a * p.scale, center[0])),
        _ => None,
    };
    if p.dim != 1 {
        return Err(BanError::InvalidConfig("closed form needs dimension 1".into()));
    }
    let (at, ct) = quad(&p.test).ok_or_else(|| BanError::InvalidConfig("test loss must be quadratic".into()))?;
    let mut prec = 1.0;
    let mut lin = 0.0;
    for (l, r) in p.train.iter().zip(&p.rho) {
        let (a, c) = quad(l).ok_or_else(|| BanError::InvalidConfig("training losses must be quadratic".into()))?;
        prec += r * a;
        lin += r * a * c;
    }
    let mu = lin / prec;
    Ok((prec / (prec + at)).sqrt() * (-0.5 * (prec * at / (prec + at)) * (mu - ct).powi(2)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Self-normalized Monte Carlo estimate of the predictive, for dimensions up to six.
pub fn mc_predictive(p: &TinyProblem, draws: usize, seed: u64) -> Result<McEstimate> {
    p.validate(MAX_MC_DIM)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; p.dim];
    let mut train = vec![0.0; p.train.len()];
    let mut lw = Vec::with_capacity(draws);
    let mut et = Vec::with_capacity(draws);
    for _ in 0..draws {
        w.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        let lt = p.losses(&w, &mut train);
        lw.push(-dot(&p.rho, &train));
        et.push((-lt).exp());
    }
    let shift = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wt: Vec<f64> = lw.iter().map(|x| (x - shift).exp()).collect();
    let z: f64 = wt.iter().sum();
    let value = wt.iter().zip(&et).map(|(a, b)| a * b).sum::<f64>() / z;
    // delta-method variance of a ratio estimator
    let var = wt.iter().zip(&et).map(|(a, b)| (a * (b - value)).powi(2)).sum::<f64>() / (z * z);
    Ok(McEstimate { value, std_error: var.sqrt() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(BanError::InvalidConfig("mixture needs matching, nonempty component lists".into()));
        }
        if weights.iter().any(|a| !(a.is_finite() && *a >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(BanError::InvalidConfig("mixture weights must be nonnegative and sum to 1".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(BanError::InvalidConfig("mixture means must be finite and variances positive".into()));
        }
        Ok(GaussianMixture { weights, means, variances })
    }

    /// k components, means in [−2, 2], variances in [0.1, 2].
    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Self {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|a| a / total).collect();
        let head: f64 = weights[..k - 1].iter().sum();
        weights[k - 1] = 1.0 - head;
        let means = (0..k).map(|_| rng.random_range(-2.0..=2.0)).collect();
        let variances = (0..k).map(|_| rng.random_range(0.1..=2.0)).collect();
        GaussianMixture { weights, means, variances }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JensenGap {
    /// Σ Aₖ e^{μₖ + σₖ²/2}
    pub lhs: f64,
    /// e^{μ̄ + σ̄²/2} with σ̄² the mean within-component variance.
    pub rhs: f64,
    /// Same exponent but with the full mixture variance. Reported only.
    pub rhs_full_variance: f64,
}

pub fn jensen_gap(g: &GaussianMixture) -> JensenGap {
    let mut lhs = 0.0;
    let mut mean = 0.0;
    let mut within = 0.0;
    let mut second = 0.0;
    for k in 0..g.components() {
        let (a, m, v) = (g.weights[k], g.means[k], g.variances[k]);
        lhs += a * (m + 0.5 * v).exp();
        mean += a * m;
        within += a * v;
        second += a * (v + m * m);
    }
    let full = second - mean * mean;
    JensenGap { lhs, rhs: (mean + 0.5 * within).exp(), rhs_full_variance: (mean + 0.5 * full).exp() }
}

fn random_loss<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Loss {
    if rng.random_bool(0.7) {
        Loss::Quadratic {
            a: rng.random_range(0.5..2.0),
            center: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    } else {
        Loss::Logistic {
            x: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            y: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        }
    }
}

fn random_rho<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r * n as f64 / total).collect()
}

/// Random problem with 1..=6 training losses, ρ summing to the training count.
pub fn random_problem<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> TinyProblem {
    let n = rng.random_range(1..=MAX_TRAIN);
    let train = (0..n).map(|_| random_loss(rng, dim)).collect();
    let test = random_loss(rng, dim);
    TinyProblem { dim, step: MAX_STEP, train, test, rho: random_rho(rng, n), scale }
}

/// Random problem whose test loss is a perturbed copy of training loss 0.
pub fn correlated_problem<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> TinyProblem {
    let mut p = random_problem(rng, dim, scale);
    let a = rng.random_range(0.5..2.0);
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.test = Loss::Quadratic {
        a: a * rng.random_range(0.8..1.25),
        center: center.iter().map(|c| c + rng.random_range(-0.2..0.2)).collect(),
    };
    p.train[0] = Loss::Quadratic { a, center };
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(a: f64, c: &[f64]) -> Loss {
        Loss::Quadratic { a, center: c.to_vec() }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn zero_rho_gives_prior_predictive() {
        // ∫ e^{-½a(w-c)²} N(w) dw in closed form, with the grid's ±3 truncation
        // handled by computing the same ratio on a much finer grid
        let p = TinyProblem::new(1, vec![quad(1.0, &[0.5]), quad(2.0, &[-0.3])], quad(1.5, &[0.2]), vec![0.0, 0.0]).unwrap();
        let got = exact_predictive(&p).unwrap();
        let mut fine = p.clone();
        fine.step = 0.001;
        let reference = predictive_at(&fine, 0.001);
        assert!(fine.validate(1).is_ok());
        assert!(rel(got, reference) < 1e-7, "{got} vs {reference}");
        let prior_only = TinyProblem::new(1, vec![], quad(1.5, &[0.2]), vec![]).unwrap();
        assert!(rel(exact_predictive(&prior_only).unwrap(), got) < 1e-14);
    }

    #[test]
    fn constant_test_loss_factors_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in 1..=2 {
            let mut p = random_problem(&mut rng, dim, 1.0);
            p.test = Loss::Constant(0.7);
            assert!(rel(exact_predictive(&p).unwrap(), (-0.7f64).exp()) < 1e-13);
        }
    }

    #[test]
    fn conjugate_gaussian_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            // posterior precision 13..55: the ±3 truncation stays below 1e-11
            // while the grid still resolves the peak
            let n = rng.random_range(2..=MAX_TRAIN);
            let train: Vec<Loss> = (0..n).map(|_| quad(rng.random_range(6.0..9.0), &[rng.random_range(-0.8..0.8)])).collect();
            let test = quad(rng.random_range(0.5..4.0), &[rng.random_range(-1.0..1.0)]);
            let p = TinyProblem::new(1, train, test, random_rho(&mut rng, n)).unwrap();
            let exact = exact_predictive(&p).unwrap();
            let closed = conjugate_predictive(&p).unwrap();
            assert!((exact - closed).abs() < 1e-8, "{exact} vs {closed}");
        }
    }

    #[test]
    fn predictive_is_a_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..12 {
            let p = random_problem(&mut rng, 1 + k % 2, 1.0);
            let v = exact_predictive(&p).unwrap();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn constant_training_loss_has_zero_derivative() {
        let p = TinyProblem::new(2, vec![Loss::Constant(0.4), quad(1.0, &[0.1, 0.2])], quad(1.0, &[0.0, 0.5]), vec![1.0, 1.0]).unwrap();
        let d = drho_derivative(&p, 0).unwrap();
        assert!(d.exact_fd.abs() < 1e-9 && d.approx_covariance.abs() < 1e-12 && d.exact_covariance.abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn fd_matches_exact_covariance_at_any_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..10 {
            let p = random_problem(&mut rng, 1 + k % 2, 1.0);
            let d = drho_derivative(&p, 0).unwrap();
            assert!((d.exact_fd - d.exact_covariance).abs() <= 1e-6 * d.exact_covariance.abs().max(1e-3), "{d:?}");
        }
    }

    #[test]
    fn identical_test_sample_gives_positive_derivative() {
        let c = [0.3, -0.4];
        let p = TinyProblem::new(2, vec![quad(1.0, &c), quad(1.0, &[-0.5, 0.5])], quad(1.0, &c), vec![1.0, 1.0])
            .unwrap()
            .with_scale(0.05);
        let d = drho_derivative(&p, 0).unwrap();
        assert!(d.exact_fd > 0.0 && d.approx_covariance > 0.0);
    }

    #[test]
    fn mirrored_test_loss_flips_the_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p = correlated_problem(&mut rng, 1, 0.01);
            let d = drho_derivative(&p, 0).unwrap();
            let m = drho_derivative(&mirrored_test(&p).unwrap(), 0).unwrap();
            assert!(d.exact_fd > 0.0 && m.exact_fd < 0.0, "{d:?} {m:?}");
            assert!(rel(-m.approx_covariance, d.approx_covariance) < 1e-9);
        }
    }

    #[test]
    fn quadrature_weight_rescaling_is_invisible() {
        // a constant added to every training loss rescales numerator and denominator alike
        let base = TinyProblem::new(1, vec![quad(1.0, &[0.2])], quad(1.0, &[0.0]), vec![1.0]).unwrap();
        let mut shifted = base.clone();
        shifted.train.push(Loss::Constant(50.0));
        shifted.rho.push(1.0);
        assert!(rel(exact_predictive(&base).unwrap(), exact_predictive(&shifted).unwrap()) < 1e-13);
    }

    #[test]
    fn gate_and_validation() {
        let mut p = TinyProblem::new(1, vec![], quad(1.0, &[0.0]), vec![]).unwrap();
        p.step = 0.07;
        assert!(matches!(exact_predictive(&p), Err(BanError::InvalidConfig(_))));
        let p = TinyProblem::new(4, vec![], quad(1.0, &[0.0; 4]), vec![]).unwrap();
        assert!(exact_predictive(&p).is_err());
        assert!(mc_predictive(&p, 10, 0).is_ok());
        // a spike narrower than the grid cannot converge
        let spike = TinyProblem::new(1, vec![quad(1e4, &[0.0123])], quad(1.0, &[0.5]), vec![1.0]).unwrap();
        assert!(matches!(exact_predictive(&spike), Err(BanError::QuadratureNonConvergence { .. })));
        assert!(TinyProblem::new(1, vec![quad(1.0, &[0.0, 1.0])], quad(1.0, &[0.0]), vec![1.0]).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, 2, 0.5);
        let exact = exact_predictive(&p).unwrap();
        let mc = mc_predictive(&p, 200_000, 9).unwrap();
        assert!((mc.value - exact).abs() < 5.0 * mc.std_error, "{mc:?} vs {exact}");
    }

    #[test]
    fn jensen_examples() {
        let g = GaussianMixture::new(vec![1.0], vec![0.7], vec![1.3]).unwrap();
        let j = jensen_gap(&g);
        assert_eq!(j.lhs, j.rhs);
        let g = GaussianMixture::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let j = jensen_gap(&g);
        assert!((j.lhs - (0.5 * 0.5f64.exp() + 0.5 * 1.5f64.exp())).abs() < 1e-15);
        assert!((j.lhs - 3.0652).abs() < 1e-4);
        assert!((j.rhs - 1f64.exp()).abs() < 1e-15);
        assert!(j.lhs > j.rhs);
        // full variance adds the spread of the means: 1 + 0.25
        assert!((j.rhs_full_variance - (0.5 + 0.625f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn jensen_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.random_range(1..=5);
            let j = jensen_gap(&GaussianMixture::random(&mut rng, k));
            assert!(j.lhs >= j.rhs - 1e-12);
        }
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
    }
}
