//! Encoder, decoder and importance factors.
//!
//! The encoder maps a context to a diagonal Gaussian `q(z|s)`. The decoder
//! scores a context against a latent code as `exp(<embed_u(s), z>)`; scores
//! of a batch normalized to sum to the batch size are the importance factors.
//! Both networks are per-position lookup tables summed over the window.

use rand::Rng;

use crate::error::{BanError, Result};
use crate::gaussnet::{Architecture, HyperBlock, HyperNetParams, Predictor, PredictorWeights, ALPHABET};
use crate::seqmodel::Sample;

/// Encoder variance when its log-variance network outputs zero.
pub const ENCODER_INIT_VARIANCE: f64 = 0.01;

/// Clamp on the encoder log-variance offset.
pub const LOGVAR_CLAMP: f64 = 20.0;

/// Clamp on the decoder log-score.
pub const SCORE_CLAMP: f64 = 30.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Self {
        LatentCode(values)
    }

    pub fn zeros(d: usize) -> Self {
        LatentCode(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Diagonal Gaussian `q(z|s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EncoderPosterior {
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&zk, &m), &var) in z.iter().zip(&self.mean).zip(&self.variance) {
            acc -= 0.5 * ((zk - m) * (zk - m) / var + LN_2PI + var.ln());
        }
        acc
    }
}

/// Decoder hyperparameters: an `l x 256 x d` embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub context_len: usize,
    pub latent_dim: usize,
    pub table: HyperBlock,
}

impl DecoderParams {
    pub fn zeros(arch: &Architecture) -> Self {
        DecoderParams {
            context_len: arch.context_len,
            latent_dim: arch.latent_dim,
            table: HyperBlock::zeros(arch.table_len(arch.latent_dim)),
        }
    }

    pub fn random<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        DecoderParams {
            context_len: arch.context_len,
            latent_dim: arch.latent_dim,
            table: HyperBlock::random(arch.table_len(arch.latent_dim), rng),
        }
    }

    #[inline]
    pub fn row(&self, pos: usize, byte: u8) -> usize {
        (pos * ALPHABET + byte as usize) * self.latent_dim
    }

    /// `embed_u(context)`.
    pub fn embed(&self, context: &[u8]) -> Vec<f64> {
        let d = self.latent_dim;
        let mut e = vec![0.0; d];
        for (p, &c) in context.iter().enumerate() {
            let r = self.row(p, c);
            for k in 0..d {
                e[k] += self.table.mean[r + k];
            }
        }
        e
    }
}

/// Normalized importance factors over a batch; they sum to the batch size.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceVector(Vec<f64>);

impl ImportanceVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Encoder mean and unclamped log-variance offset for `context`.
fn encoder_outputs(context: &[u8], v: &HyperNetParams) -> (Vec<f64>, Vec<f64>) {
    let d = v.arch.latent_dim;
    let bias = v.enc_bias_offset();
    let mut m = v.enc_mean.mean[bias..bias + d].to_vec();
    let mut t = v.enc_logvar.mean[bias..bias + d].to_vec();
    for (p, &c) in context.iter().enumerate() {
        let r = (p * ALPHABET + c as usize) * d;
        for k in 0..d {
            m[k] += v.enc_mean.mean[r + k];
            t[k] += v.enc_logvar.mean[r + k];
        }
    }
    (m, t)
}

pub fn encode(context: &[u8], v: &HyperNetParams) -> EncoderPosterior {
    let (mean, t) = encoder_outputs(context, v);
    let variance = t.iter().map(|&t| ENCODER_INIT_VARIANCE * t.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP).exp()).collect();
    EncoderPosterior { mean, variance }
}

/// `z = mean + sqrt(variance) * noise`.
pub fn sample_z(post: &EncoderPosterior, noise: &[f64]) -> Result<LatentCode> {
    if noise.len() != post.mean.len() {
        return Err(BanError::DimensionMismatch { expected: post.mean.len(), got: noise.len() });
    }
    Ok(LatentCode(
        post.mean.iter().zip(&post.variance).zip(noise).map(|((m, var), n)| m + var.sqrt() * n).collect(),
    ))
}

/// Clamped `<embed_u(context), z>` and whether it sits inside the clamp.
#[inline]
pub(crate) fn log_score(embed: &[f64], z: &[f64]) -> (f64, bool) {
    let raw: f64 = embed.iter().zip(z).map(|(a, b)| a * b).sum();
    if raw > SCORE_CLAMP {
        (SCORE_CLAMP, false)
    } else if raw < -SCORE_CLAMP {
        (-SCORE_CLAMP, false)
    } else {
        (raw, true)
    }
}

pub fn decoder_score(context: &[u8], z: &LatentCode, u: &DecoderParams) -> f64 {
    log_score(&u.embed(context), &z.0).0.exp()
}

/// `rho_i = B * score_i / sum(score)`.
pub fn importance(scores: &[f64]) -> Result<ImportanceVector> {
    if scores.is_empty() {
        return Err(BanError::InvalidConfig("importance needs at least one score".into()));
    }
    if let Some(s) = scores.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(BanError::ModelDefect(format!("decoder score {s} is not positive and finite")));
    }
    let b = scores.len() as f64;
    let total: f64 = scores.iter().sum();
    Ok(ImportanceVector(scores.iter().map(|&s| b * s / total).collect()))
}

/// Importance factors from log-scores, shifted by the max for range safety.
pub(crate) fn importance_from_logs(logs: &[f64], out: &mut Vec<f64>) {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logs.iter().map(|&l| (l - max).exp()));
    let total: f64 = out.iter().sum();
    let scale = logs.len() as f64 / total;
    out.iter_mut().for_each(|r| *r *= scale);
}

/// `ln rho(s|z,u) + ln N(z; 0, I) - ln q(z|s,v)`.
pub fn regularizer(context: &[u8], z: &LatentCode, u: &DecoderParams, v: &HyperNetParams) -> f64 {
    let post = encode(context, v);
    let prior: f64 = z.0.iter().map(|zk| -0.5 * (zk * zk + LN_2PI)).sum();
    log_score(&u.embed(context), &z.0).0 + prior - post.log_density(&z.0)
}

/// One reparameterized pass through the encoder.
#[derive(Clone, Debug)]
pub struct EncoderPass {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Whether each log-variance offset sits inside its clamp.
    pub logvar_free: Vec<bool>,
    pub noise: Vec<f64>,
    pub z: Vec<f64>,
}

impl EncoderPass {
    pub fn run(context: &[u8], v: &HyperNetParams, noise: &[f64]) -> Self {
        let (mean, t) = encoder_outputs(context, v);
        let logvar_free: Vec<bool> = t.iter().map(|t| t.abs() <= LOGVAR_CLAMP).collect();
        let variance: Vec<f64> =
            t.iter().map(|&t| ENCODER_INIT_VARIANCE * t.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP).exp()).collect();
        let z = mean.iter().zip(&variance).zip(noise).map(|((m, var), n)| m + var.sqrt() * n).collect();
        EncoderPass { mean, variance, logvar_free, noise: noise.to_vec(), z }
    }

    pub fn posterior(&self) -> EncoderPosterior {
        EncoderPosterior { mean: self.mean.clone(), variance: self.variance.clone() }
    }

    /// Value of the regularizer at this pass's `z`.
    pub fn regularizer(&self, embed: &[f64]) -> f64 {
        let prior: f64 = self.z.iter().map(|zk| -0.5 * (zk * zk + LN_2PI)).sum();
        log_score(embed, &self.z).0 + prior - self.posterior().log_density(&self.z)
    }

    /// Gradient of `A(z) - R(z, m, t)` with respect to the encoder outputs
    /// `(m, t)`, given `dA/dz`. `embed` is `embed_u` of the encoded context.
    pub fn backward(&self, embed: &[f64], d_a_dz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.z.len();
        let (_, score_free) = log_score(embed, &self.z);
        let mut dm = vec![0.0; d];
        let mut dt = vec![0.0; d];
        for k in 0..d {
            let (z, m, var, xi) = (self.z[k], self.mean[k], self.variance[k], self.noise[k]);
            let resid = (z - m) / var;
            // explicit dR/dz: decoder term, prior, and -ln q
            let dr_dz = if score_free { embed[k] } else { 0.0 } - z + resid;
            let gz = d_a_dz[k] - dr_dz;
            // dz/dm = 1, and d(-ln q)/dm = -(z - m)/var enters R with a minus sign
            dm[k] = gz + resid;
            if self.logvar_free[k] {
                // dz/dt = sqrt(var) xi / 2, d(-ln q)/dt = (1 - xi^2) / 2
                dt[k] = 0.5 * gz * var.sqrt() * xi - 0.5 * (1.0 - xi * xi);
            }
        }
        (dm, dt)
    }
}

/// Flat indices into `enc_mean` / `enc_logvar` that receive gradient for `context`.
pub fn encoder_rows(context: &[u8], arch: &Architecture) -> Vec<usize> {
    let d = arch.latent_dim;
    let mut rows: Vec<usize> = context.iter().enumerate().map(|(p, &c)| (p * ALPHABET + c as usize) * d).collect();
    rows.push(arch.table_len(d));
    rows
}

/// `d rho_i / d ln score_j = rho_i (delta_ij - rho_j / B)`, zero where clamped.
pub fn importance_log_jacobian(rho: &[f64], i: usize, free: &[bool]) -> Vec<f64> {
    let b = rho.len() as f64;
    rho.iter()
        .enumerate()
        .map(|(j, &rj)| {
            if !free[j] {
                return 0.0;
            }
            let delta = if i == j { 1.0 } else { 0.0 };
            rho[i] * (delta - rj / b)
        })
        .collect()
}

/// Dense `d rho_i / d u` over the decoder table for a batch of contexts.
pub fn importance_grad_u(contexts: &[&[u8]], z: &LatentCode, u: &DecoderParams, i: usize) -> Vec<f64> {
    let (logs, free): (Vec<f64>, Vec<bool>) = contexts.iter().map(|c| log_score(&u.embed(c), &z.0)).unzip();
    let mut rho = Vec::new();
    importance_from_logs(&logs, &mut rho);
    let jac = importance_log_jacobian(&rho, i, &free);
    let d = u.latent_dim;
    let mut out = vec![0.0; u.table.len()];
    for (ctx, &a) in contexts.iter().zip(&jac) {
        for (p, &c) in ctx.iter().enumerate() {
            let r = u.row(p, c);
            for k in 0..d {
                out[r + k] += a * z.0[k];
            }
        }
    }
    out
}

/// `sum_j var_j / K * g_train_j * g_test_j`.
pub fn loss_correlation(g_train: &[f64], g_test: &[f64], weight_var: &[f64], k: usize) -> f64 {
    let mut acc = 0.0;
    for ((a, b), s) in g_train.iter().zip(g_test).zip(weight_var) {
        acc += s * a * b;
    }
    acc / k as f64
}

/// Attention gradient for training sample `i`: the loss correlation between
/// the train and test samples times `d rho_i / d u`.
pub fn attention_grad_u(
    predictor: &Predictor,
    train_sample: &Sample,
    test_sample: &Sample,
    w: &PredictorWeights,
    weight_var: &[f64],
    rho_row: &[f64],
    k: usize,
) -> Result<(f64, Vec<f64>)> {
    let (_, g_train) = predictor.loss_and_grad(train_sample, w)?;
    let (_, g_test) = predictor.loss_and_grad(test_sample, w)?;
    let c = loss_correlation(&g_train, &g_test, weight_var, k);
    Ok((c, rho_row.iter().map(|r| c * r).collect()))
}
