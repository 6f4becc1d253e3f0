//! Predictor networks whose weights are generated from a latent code.
//!
//! Every trainable scalar is a [`GaussianHyper`]. The predictor weights are
//! `w = W z + b + sigma * noise`, where `W` and `b` are the means of the
//! generator hyperparameters and `sigma_j = 1 / sqrt(precision(b_j))`.
//!
//! Predictor: per-position byte embeddings, concatenated, one tanh hidden
//! layer, 256-way softmax.

use rand::Rng;

use crate::attention::LatentCode;
use crate::error::{BanError, Result};
use crate::seqmodel::Sample;

pub const ALPHABET: usize = 256;

/// Starting precision of every hyperparameter (variance 0.01).
pub const INIT_PRECISION: f64 = 100.0;

/// Means are initialized uniformly in `[-INIT_MEAN_RANGE, INIT_MEAN_RANGE]`.
pub const INIT_MEAN_RANGE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianHyper {
    pub mean: f64,
    pub precision: f64,
}

impl GaussianHyper {
    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }
}

/// A contiguous run of hyperparameters, stored as parallel mean/precision arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBlock {
    pub mean: Vec<f64>,
    pub precision: Vec<f64>,
}

impl HyperBlock {
    pub fn zeros(n: usize) -> Self {
        HyperBlock { mean: vec![0.0; n], precision: vec![INIT_PRECISION; n] }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mean = (0..n).map(|_| rng.random_range(-INIT_MEAN_RANGE..=INIT_MEAN_RANGE)).collect();
        HyperBlock { mean, precision: vec![INIT_PRECISION; n] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn get(&self, i: usize) -> GaussianHyper {
        GaussianHyper { mean: self.mean[i], precision: self.precision[i] }
    }

    pub fn iter(&self) -> impl Iterator<Item = GaussianHyper> + '_ {
        self.mean.iter().zip(&self.precision).map(|(&mean, &precision)| GaussianHyper { mean, precision })
    }

    /// One recursive update: `mean -= direction * eps * grad / precision`,
    /// `precision += eps * grad^2`. Both use the pre-update precision.
    #[inline]
    pub fn update(&mut self, i: usize, grad: f64, eps: f64, direction: f64) {
        let tau = self.precision[i];
        self.mean[i] -= direction * eps * grad / tau;
        self.precision[i] = tau + eps * grad * grad;
    }
}

/// Network sizes. Alphabet is fixed at 256.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub context_len: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { context_len: 8, latent_dim: 8, embed_dim: 16, hidden: 64 }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        // l and d travel in one-byte container fields
        if !(1..=255).contains(&self.context_len) {
            return Err(BanError::InvalidConfig(format!("context length {} not in 1..=255", self.context_len)));
        }
        if !(1..=255).contains(&self.latent_dim) {
            return Err(BanError::InvalidConfig(format!("latent dimension {} not in 1..=255", self.latent_dim)));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(BanError::InvalidConfig("embedding and hidden sizes must be positive".into()));
        }
        if self.embed_dim > 4096 || self.hidden > 4096 {
            return Err(BanError::InvalidConfig("layer sizes above 4096 are not supported".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> PredictorLayout {
        PredictorLayout::new(self)
    }

    /// Size of a per-position byte lookup table with `width` columns.
    pub fn table_len(&self, width: usize) -> usize {
        self.context_len * ALPHABET * width
    }
}

/// Offsets into the flat predictor weight vector.
///
/// `[emb: l x 256 x E][hid_w: H x lE][hid_b: H][out_w: 256 x H][out_b: 256]`
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorLayout {
    pub context_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub hid_w: usize,
    pub hid_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub len: usize,
}

impl PredictorLayout {
    fn new(arch: &Architecture) -> Self {
        let (l, e, h) = (arch.context_len, arch.embed_dim, arch.hidden);
        let hid_w = l * ALPHABET * e;
        let hid_b = hid_w + h * l * e;
        let out_w = hid_b + h;
        let out_b = out_w + ALPHABET * h;
        let len = out_b + ALPHABET;
        PredictorLayout { context_len: l, embed_dim: e, hidden: h, hid_w, hid_b, out_w, out_b, len }
    }

    pub fn input_len(&self) -> usize {
        self.context_len * self.embed_dim
    }

    /// First index of the embedding row for `byte` at window position `pos`.
    #[inline]
    pub fn emb_row(&self, pos: usize, byte: u8) -> usize {
        (pos * ALPHABET + byte as usize) * self.embed_dim
    }

    /// Everything from the hidden layer on is used by every context.
    pub fn dense(&self) -> std::ops::Range<usize> {
        self.hid_w..self.len
    }

    /// Index ranges of `w` that a prediction for `context` reads.
    pub fn active_ranges(&self, context: &[u8]) -> Vec<std::ops::Range<usize>> {
        let mut out: Vec<_> = context
            .iter()
            .enumerate()
            .map(|(p, &c)| {
                let r = self.emb_row(p, c);
                r..r + self.embed_dim
            })
            .collect();
        out.push(self.dense());
        out
    }
}

/// The generator and encoder hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetParams {
    pub arch: Architecture,
    /// `W`, row-major `[predictor_len x d]`.
    pub gen_weight: HyperBlock,
    /// `b`, one per predictor weight; its precisions set the weight noise.
    pub gen_bias: HyperBlock,
    /// Encoder mean: `l x 256 x d` lookup table followed by a `d` bias.
    pub enc_mean: HyperBlock,
    /// Encoder log-variance offset, same shape as `enc_mean`.
    pub enc_logvar: HyperBlock,
}

impl HyperNetParams {
    pub fn zeros(arch: Architecture) -> Self {
        let p = arch.layout().len;
        let d = arch.latent_dim;
        let enc = arch.table_len(d) + d;
        HyperNetParams {
            arch,
            gen_weight: HyperBlock::zeros(p * d),
            gen_bias: HyperBlock::zeros(p),
            enc_mean: HyperBlock::zeros(enc),
            enc_logvar: HyperBlock::zeros(enc),
        }
    }

    pub fn random<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let p = arch.layout().len;
        let d = arch.latent_dim;
        let enc = arch.table_len(d) + d;
        HyperNetParams {
            arch,
            gen_weight: HyperBlock::random(p * d, rng),
            gen_bias: HyperBlock::random(p, rng),
            enc_mean: HyperBlock::random(enc, rng),
            enc_logvar: HyperBlock::random(enc, rng),
        }
    }

    /// Blocks in serialization order.
    pub fn blocks(&self) -> [&HyperBlock; 4] {
        [&self.gen_weight, &self.gen_bias, &self.enc_mean, &self.enc_logvar]
    }

    pub fn blocks_mut(&mut self) -> [&mut HyperBlock; 4] {
        [&mut self.gen_weight, &mut self.gen_bias, &mut self.enc_mean, &mut self.enc_logvar]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean at a flat index over all blocks in serialization order.
    pub fn mean_mut(&mut self, mut index: usize) -> &mut f64 {
        for block in self.blocks_mut() {
            if index < block.len() {
                return &mut block.mean[index];
            }
            index -= block.len();
        }
        panic!("hyperparameter index out of range")
    }

    /// Offset of the encoder bias inside `enc_mean` / `enc_logvar`.
    pub fn enc_bias_offset(&self) -> usize {
        self.arch.table_len(self.arch.latent_dim)
    }

    /// Standard deviation of generated predictor weight `j`.
    #[inline]
    pub fn weight_sigma(&self, j: usize) -> f64 {
        1.0 / self.gen_bias.precision[j].sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorWeights(pub Vec<f64>);

impl PredictorWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Probability mass over the 256 byte values.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf(Vec<f64>);

impl Pmf {
    pub fn uniform() -> Self {
        Pmf(vec![1.0 / ALPHABET as f64; ALPHABET])
    }

    pub fn from_probs(p: Vec<f64>) -> Result<Self> {
        if p.len() != ALPHABET {
            return Err(BanError::DimensionMismatch { expected: ALPHABET, got: p.len() });
        }
        Ok(Pmf(p))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `(mu_w, sigma_w)` for latent code `z`.
pub fn weight_stats(z: &LatentCode, v: &HyperNetParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = v.arch.latent_dim;
    if z.dim() != d {
        return Err(BanError::DimensionMismatch { expected: d, got: z.dim() });
    }
    let p = v.gen_bias.len();
    let mut mu = vec![0.0; p];
    generate_range(v, z.values(), 0..p, None, &mut mu);
    let sigma = (0..p).map(|j| v.weight_sigma(j)).collect();
    Ok((mu, sigma))
}

/// Reparameterized draw `mu + sigma * noise`.
pub fn sample_weights(mu: &[f64], sigma: &[f64], noise: &[f64]) -> Result<PredictorWeights> {
    if sigma.len() != mu.len() || noise.len() != mu.len() {
        return Err(BanError::DimensionMismatch { expected: mu.len(), got: sigma.len().min(noise.len()) });
    }
    Ok(PredictorWeights(mu.iter().zip(sigma).zip(noise).map(|((m, s), n)| m + s * n).collect()))
}

/// Dot product with eight interleaved partial sums, which lets it vectorize.
/// The summation order is fixed, so results do not depend on the SIMD width.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// Turns `ws.logits` into `ws.probs`. False if any logit is non-finite.
pub(crate) fn softmax(ws: &mut Workspace) -> bool {
    let max = ws.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || ws.logits.iter().any(|l| !l.is_finite()) {
        return false;
    }
    let mut total = 0.0;
    for a in 0..ALPHABET {
        let p = (ws.logits[a] - max).exp();
        ws.probs[a] = p;
        total += p;
    }
    let inv = 1.0 / total;
    for p in ws.probs.iter_mut() {
        *p *= inv;
    }
    true
}

/// Writes `W z + b (+ sigma * noise)` into `out[range]`.
#[inline]
pub(crate) fn generate_range(
    v: &HyperNetParams,
    z: &[f64],
    range: std::ops::Range<usize>,
    noise: Option<&[f64]>,
    out: &mut [f64],
) {
    let d = z.len();
    let wm = &v.gen_weight.mean;
    for j in range {
        let row = &wm[j * d..j * d + d];
        let mut acc = v.gen_bias.mean[j];
        for k in 0..d {
            acc += row[k] * z[k];
        }
        if let Some(noise) = noise {
            acc += v.weight_sigma(j) * noise[j];
        }
        out[j] = acc;
    }
}

/// Scratch buffers for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub x: Vec<f64>,
    pub act: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    dact: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    pub fn new(layout: &PredictorLayout) -> Self {
        Workspace {
            x: vec![0.0; layout.input_len()],
            act: vec![0.0; layout.hidden],
            logits: vec![0.0; ALPHABET],
            probs: vec![0.0; ALPHABET],
            dact: vec![0.0; layout.hidden],
            dx: vec![0.0; layout.input_len()],
        }
    }
}

/// The context predictor. Stateless apart from its layout.
#[derive(Clone, Copy, Debug)]
pub struct Predictor {
    pub layout: PredictorLayout,
}

impl Predictor {
    pub fn new(arch: &Architecture) -> Self {
        Predictor { layout: arch.layout() }
    }

    /// Softmax probabilities for `context`. Returns false if any logit is non-finite.
    pub fn forward(&self, context: &[u8], w: &[f64], ws: &mut Workspace) -> bool {
        let lay = &self.layout;
        let h = lay.hidden;
        self.hidden(context, w, ws);
        for a in 0..ALPHABET {
            let row = &w[lay.out_w + a * h..lay.out_w + (a + 1) * h];
            ws.logits[a] = w[lay.out_b + a] + dot(row, &ws.act);
        }
        softmax(ws)
    }

    /// Fills `ws.x` and the tanh activations `ws.act`. Reads only the
    /// embedding rows of `context` and the hidden layer of `w`.
    pub(crate) fn hidden(&self, context: &[u8], w: &[f64], ws: &mut Workspace) {
        let lay = &self.layout;
        let (e, n_in) = (lay.embed_dim, lay.input_len());
        for (p, &c) in context.iter().enumerate() {
            let r = lay.emb_row(p, c);
            ws.x[p * e..(p + 1) * e].copy_from_slice(&w[r..r + e]);
        }
        for u in 0..lay.hidden {
            let row = &w[lay.hid_w + u * n_in..lay.hid_w + (u + 1) * n_in];
            ws.act[u] = (w[lay.hid_b + u] + dot(row, &ws.x)).tanh();
        }
    }

    /// Gradient of `-ln p[target]` after [`forward`](Self::forward) on the same
    /// context and weights. Overwrites `grad` on the rows this context reads;
    /// other entries are left untouched.
    pub fn backward(&self, context: &[u8], target: u8, w: &[f64], ws: &mut Workspace, grad: &mut [f64]) {
        let lay = &self.layout;
        let (e, h, n_in) = (lay.embed_dim, lay.hidden, lay.input_len());
        ws.dact.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..ALPHABET {
            let dlogit = ws.probs[a] - if a == target as usize { 1.0 } else { 0.0 };
            grad[lay.out_b + a] = dlogit;
            let base = lay.out_w + a * h;
            for u in 0..h {
                grad[base + u] = dlogit * ws.act[u];
                ws.dact[u] += dlogit * w[base + u];
            }
        }
        ws.dx.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..h {
            let dpre = ws.dact[u] * (1.0 - ws.act[u] * ws.act[u]);
            grad[lay.hid_b + u] = dpre;
            let base = lay.hid_w + u * n_in;
            for q in 0..n_in {
                grad[base + q] = dpre * ws.x[q];
                ws.dx[q] += dpre * w[base + q];
            }
        }
        for (p, &c) in context.iter().enumerate() {
            let r = lay.emb_row(p, c);
            grad[r..r + e].copy_from_slice(&ws.dx[p * e..(p + 1) * e]);
        }
    }

    pub fn predict(&self, context: &[u8], w: &PredictorWeights) -> Result<Pmf> {
        self.check(context, w)?;
        let mut ws = Workspace::new(&self.layout);
        if !self.forward(context, &w.0, &mut ws) {
            return Err(BanError::ModelDefect("non-finite logits".into()));
        }
        Ok(Pmf(ws.probs))
    }

    /// `-ln P(target | context, w)` and its full gradient.
    pub fn loss_and_grad(&self, sample: &Sample, w: &PredictorWeights) -> Result<(f64, Vec<f64>)> {
        let ctx = sample.context.bytes();
        self.check(ctx, w)?;
        let mut ws = Workspace::new(&self.layout);
        if !self.forward(ctx, &w.0, &mut ws) {
            return Err(BanError::ModelDefect("non-finite logits".into()));
        }
        let loss = -ws.probs[sample.target as usize].ln();
        let mut grad = vec![0.0; self.layout.len];
        self.backward(ctx, sample.target, &w.0, &mut ws, &mut grad);
        Ok((loss, grad))
    }

    fn check(&self, context: &[u8], w: &PredictorWeights) -> Result<()> {
        if context.len() != self.layout.context_len {
            return Err(BanError::DimensionMismatch { expected: self.layout.context_len, got: context.len() });
        }
        if w.0.len() != self.layout.len {
            return Err(BanError::DimensionMismatch { expected: self.layout.len, got: w.0.len() });
        }
        Ok(())
    }
}

/// Gradient of `-ln P(target | context, w)` with respect to the generator
/// means, where `w = W z + b + sigma * noise`. Laid out as `[dW (p x d), db (p)]`.
pub fn backprop_to_v(sample: &Sample, z: &LatentCode, noise: &[f64], v: &HyperNetParams) -> Result<Vec<f64>> {
    let predictor = Predictor::new(&v.arch);
    let (mu, sigma) = weight_stats(z, v)?;
    let w = sample_weights(&mu, &sigma, noise)?;
    let (_, grad_w) = predictor.loss_and_grad(sample, &w)?;
    Ok(pullback(&grad_w, z.values()))
}

/// Chain rule through the affine generator: `dW[j,k] = g_j z_k`, `db[j] = g_j`.
pub fn pullback(grad_w: &[f64], z: &[f64]) -> Vec<f64> {
    let (p, d) = (grad_w.len(), z.len());
    let mut out = vec![0.0; p * d + p];
    for (j, &g) in grad_w.iter().enumerate() {
        for k in 0..d {
            out[j * d + k] = g * z[k];
        }
        out[p * d + j] = g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_error};
    use crate::seqmodel::Context;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny() -> Architecture {
        Architecture { context_len: 2, latent_dim: 3, embed_dim: 2, hidden: 3 }
    }

    fn normals(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn layout_sizes() {
        let lay = Architecture::default().layout();
        assert_eq!(lay.len, 8 * 256 * 16 + 64 * 128 + 64 + 256 * 64 + 256);
        assert_eq!(lay.active_ranges(&[0; 8]).len(), 9);
    }

    #[test]
    fn zero_latent_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = HyperNetParams::random(tiny(), &mut rng);
        let (mu, sigma) = weight_stats(&LatentCode::zeros(3), &v).unwrap();
        assert_eq!(mu, v.gen_bias.mean);
        assert!(sigma.iter().all(|&s| (s - 0.1).abs() < 1e-15));
    }

    #[test]
    fn zero_means_give_zero_weights() {
        let v = HyperNetParams::zeros(tiny());
        let z = LatentCode::new(vec![1.0, -2.0, 3.0]);
        let (mu, _) = weight_stats(&z, &v).unwrap();
        assert!(mu.iter().all(|&m| m == 0.0));
        assert!(weight_stats(&LatentCode::zeros(2), &v).is_err());
    }

    #[test]
    fn weight_stats_independent_of_summation_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = HyperNetParams::random(tiny(), &mut rng);
        let z = LatentCode::new(normals(3, &mut rng));
        let (mu, _) = weight_stats(&z, &v).unwrap();
        let d = 3;
        for j in 0..mu.len() {
            // reversed order, bias last
            let mut acc = 0.0;
            for k in (0..d).rev() {
                acc += v.gen_weight.mean[j * d + k] * z.values()[k];
            }
            acc += v.gen_bias.mean[j];
            assert!((acc - mu[j]).abs() <= 1e-12);
        }
        let again = weight_stats(&z, &v).unwrap().0;
        assert_eq!(mu, again);
    }

    #[test]
    fn degenerate_draws() {
        let mu = vec![0.5, -1.0, 2.0];
        let w = sample_weights(&mu, &[0.0; 3], &[1.0, -3.0, 7.0]).unwrap();
        assert_eq!(w.0, mu);
        let w = sample_weights(&mu, &[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(w.0, mu);
    }

    #[test]
    fn draws_have_expected_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = vec![0.3, -1.2, 4.0];
        let sigma = vec![0.5, 2.0, 0.1];
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let w = sample_weights(&mu, &sigma, &normals(3, &mut rng)).unwrap();
            for k in 0..3 {
                acc[k] += w.0[k];
            }
        }
        for k in 0..3 {
            let tol = 4.0 * sigma[k] / (n as f64).sqrt();
            assert!((acc[k] / n as f64 - mu[k]).abs() <= tol, "coordinate {k}");
        }
    }

    #[test]
    fn zero_weights_are_uniform() {
        let arch = tiny();
        let pred = Predictor::new(&arch);
        let w = PredictorWeights(vec![0.0; pred.layout.len]);
        let pmf = pred.predict(&[3, 4], &w).unwrap();
        assert!(pmf.probs().iter().all(|&p| (p - 1.0 / 256.0).abs() < 1e-15));
        let sample = Sample { context: Context::new(vec![3, 4]).unwrap(), target: 9, index: 0 };
        let (loss, grad) = pred.loss_and_grad(&sample, &w).unwrap();
        assert!((loss - 256f64.ln()).abs() < 1e-12);
        // d loss / d logit_target = p - 1
        assert!((grad[pred.layout.out_b + 9] - (1.0 / 256.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn pmf_normalized_for_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = Predictor::new(&tiny());
        for _ in 0..20 {
            let w = PredictorWeights(normals(pred.layout.len, &mut rng).iter().map(|x| 3.0 * x).collect());
            let pmf = pred.predict(&[rng.random(), rng.random()], &w).unwrap();
            assert!((pmf.sum() - 1.0).abs() <= 1e-9);
            assert!(pmf.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        let pred = Predictor::new(&tiny());
        let mut w = vec![0.0; pred.layout.len];
        w[pred.layout.out_b + 7] = f64::NAN;
        assert!(pred.predict(&[0, 0], &PredictorWeights(w)).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred = Predictor::new(&tiny());
        let sample = Sample { context: Context::new(vec![17, 200]).unwrap(), target: 42, index: 0 };
        let w: Vec<f64> = normals(pred.layout.len, &mut rng).iter().map(|x| 0.5 * x).collect();
        let (_, grad) = pred.loss_and_grad(&sample, &PredictorWeights(w.clone())).unwrap();
        let idx: Vec<usize> = pred.layout.active_ranges(sample.context.bytes()).into_iter().flatten().collect();
        let f = |x: &[f64]| pred.loss_and_grad(&sample, &PredictorWeights(x.to_vec())).unwrap().0;
        let fd = central_diff(f, &w, &idx, 1e-5);
        let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        assert!(max_rel_error(&analytic, &fd) <= 1e-4);
    }

    #[test]
    fn backprop_to_v_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let arch = tiny();
        let v = HyperNetParams::random(arch, &mut rng);
        let p = arch.layout().len;
        let d = arch.latent_dim;
        let z = LatentCode::new(normals(d, &mut rng));
        let noise = normals(p, &mut rng);
        let sample = Sample { context: Context::new(vec![1, 2]).unwrap(), target: 3, index: 0 };
        let grad = backprop_to_v(&sample, &z, &noise, &v).unwrap();
        // a mix of W and b coordinates on the rows this sample reads
        let mut idx = Vec::new();
        for r in arch.layout().active_ranges(sample.context.bytes()) {
            for j in r.step_by(7) {
                idx.push(j * d + j % d);
                idx.push(p * d + j);
            }
        }
        let x: Vec<f64> = v.gen_weight.mean.iter().chain(&v.gen_bias.mean).copied().collect();
        let f = |x: &[f64]| {
            let mut v2 = v.clone();
            v2.gen_weight.mean.copy_from_slice(&x[..p * d]);
            v2.gen_bias.mean.copy_from_slice(&x[p * d..]);
            let pred = Predictor::new(&arch);
            let (mu, sigma) = weight_stats(&z, &v2).unwrap();
            let w = sample_weights(&mu, &sigma, &noise).unwrap();
            pred.loss_and_grad(&sample, &w).unwrap().0
        };
        let fd = central_diff(f, &x, &idx, 1e-5);
        let analytic: Vec<f64> = idx.iter().map(|&i| grad[i]).collect();
        assert!(max_rel_error(&analytic, &fd) <= 1e-4);
    }

    #[test]
    fn zero_noise_pullback() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = tiny();
        let v = HyperNetParams::random(arch, &mut rng);
        let p = arch.layout().len;
        let z = LatentCode::new(normals(3, &mut rng));
        let sample = Sample { context: Context::new(vec![9, 9]).unwrap(), target: 0, index: 0 };
        let grad = backprop_to_v(&sample, &z, &vec![0.0; p], &v).unwrap();
        let (mu, _) = weight_stats(&z, &v).unwrap();
        let (_, gw) = Predictor::new(&arch).loss_and_grad(&sample, &PredictorWeights(mu)).unwrap();
        assert_eq!(grad, pullback(&gw, z.values()));
        assert!(pullback(&vec![0.0; p], z.values()).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn update_rule_scalar() {
        let mut b = HyperBlock { mean: vec![0.0], precision: vec![1.0] };
        b.update(0, 1.0, 0.1, 1.0);
        assert!((b.mean[0] + 0.1).abs() < 1e-15);
        assert!((b.precision[0] - 1.1).abs() < 1e-15);
        let before = b.clone();
        b.update(0, 0.0, 0.1, 1.0);
        assert_eq!(b, before);
    }
}
