//! Recursive mean/precision training.
//!
//! Each step takes a batch whose last element is the pseudo-test sample
//! `(a, s)` and the rest are training samples:
//!
//! 1. draw a training index `i` uniformly;
//! 2. `z ~ q(z|s, v)`;
//! 3. `w ~ N(W z + b, sigma_w^2)`;
//! 4. importance factors `rho` from decoder scores over the batch;
//! 5. `grad_v` of `rho_i l(a_i|s_i, w) - R(s, z)` where `R` is the
//!    variational regularizer;
//! 6. `grad_u = c * d rho_i / d u` with `c` the weight-variance-weighted
//!    correlation of the train and test loss gradients;
//! 7. every touched hyperparameter gets `mean -= eps grad / precision` and
//!    `precision += eps grad^2`, with `eps = 1 / epochs`.
//!
//! All gradients are computed before any update is applied.

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{
    self, encoder_rows, importance_from_logs, importance_log_jacobian, log_score, DecoderParams, EncoderPass,
    LatentCode,
};
use crate::error::{BanError, Result};
use crate::gaussnet::{generate_range, Architecture, HyperNetParams, Predictor, PredictorLayout, Workspace};
use crate::seqmodel::{make_samples, Sample};
use crate::snapshot::{ModelSnapshot, TrainMeta};

/// Per-sample loss cap (nats) inside the complete-loss products.
pub const LOSS_CAP: f64 = 30.0;

/// How the attention gradient moves the decoder means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSign {
    /// `mean -= eps * var * grad_u`, as written in the update rules.
    Descent,
    /// `mean += eps * var * grad_u`: raises the importance of samples whose
    /// loss correlates positively with the test loss.
    Ascent,
}

impl AttentionSign {
    fn direction(self) -> f64 {
        match self {
            AttentionSign::Descent => 1.0,
            AttentionSign::Ascent => -1.0,
        }
    }

    pub fn as_byte(self) -> u8 {
        match self {
            AttentionSign::Descent => 0,
            AttentionSign::Ascent => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AttentionSign::Descent),
            1 => Some(AttentionSign::Ascent),
            _ => None,
        }
    }
}

impl std::str::FromStr for AttentionSign {
    type Err = BanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descent" => Ok(AttentionSign::Descent),
            "ascent" => Ok(AttentionSign::Ascent),
            other => Err(BanError::InvalidConfig(format!("attention sign must be descent or ascent, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch: usize,
    pub seed: u64,
    pub arch: Architecture,
    pub attention_sign: AttentionSign,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch: 16,
            seed: 0,
            arch: Architecture::default(),
            attention_sign: AttentionSign::Descent,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(BanError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch < 2 {
            return Err(BanError::InvalidConfig("batch size must be at least 2".into()));
        }
        self.arch.validate()
    }

    /// `1 / epochs`.
    pub fn learning_rate(&self) -> f64 {
        1.0 / self.epochs as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub v: HyperNetParams,
    pub u: DecoderParams,
    pub epoch: u32,
    pub steps: u64,
}

impl TrainState {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let v = HyperNetParams::random(arch, rng);
        let u = DecoderParams::random(&arch, rng);
        TrainState { v, u, epoch: 0, steps: 0 }
    }

    pub fn zeros(arch: Architecture) -> Self {
        TrainState { v: HyperNetParams::zeros(arch), u: DecoderParams::zeros(&arch), epoch: 0, steps: 0 }
    }
}

/// Random inputs of one step, fixed so a step can be replayed.
#[derive(Clone, Debug)]
pub struct StepDraws {
    pub train_index: usize,
    pub z_noise: Vec<f64>,
    /// One entry per predictor weight; only rows read by the step matter.
    pub w_noise: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub accepted: bool,
    pub train_index: usize,
    pub rho: Vec<f64>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub correlation: f64,
    pub complete_loss: Option<f64>,
}

/// Gradients of one step at flat parameter indices.
#[derive(Clone, Debug, Default)]
pub struct StepGradient {
    /// Indices follow [`HyperNetParams::mean_mut`].
    pub v: Vec<(usize, f64)>,
    /// Indices into the decoder table.
    pub u: Vec<(usize, f64)>,
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: u32,
    pub mean_complete_loss: f64,
    pub bits_per_byte: f64,
    pub seconds: f64,
    pub rejected_steps: u64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {} loss {:.6} bits/byte {:.4} time {:.2}s",
            self.epoch, self.mean_complete_loss, self.bits_per_byte, self.seconds
        )
    }
}

/// Hooks for watching a training run.
pub trait TrainObserver {
    fn on_step(&mut self, _report: &StepReport, _state: &TrainState) {}
    fn on_epoch(&mut self, _log: &EpochLog) {}
}

impl TrainObserver for () {}

/// Reusable buffers and configuration for stepping a [`TrainState`].
pub struct Trainer {
    config: TrainConfig,
    predictor: Predictor,
    w: Vec<f64>,
    noise: Vec<f64>,
    g_train: Vec<f64>,
    g_test: Vec<f64>,
    grad_gen_w: Vec<f64>,
    grad_gen_b: Vec<f64>,
    grad_dec: Vec<f64>,
    dec_touched: Vec<usize>,
    dec_seen: Vec<bool>,
    ranges: Vec<Range<usize>>,
    train_ranges: Vec<Range<usize>>,
    rho: Vec<f64>,
    ws: Workspace,
    rejected: u64,
    last_encoder_grad: (Vec<f64>, Vec<f64>),
    dec_touched_grads: Vec<(usize, f64)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.arch;
        let layout = arch.layout();
        let p = layout.len;
        let d = arch.latent_dim;
        Ok(Trainer {
            predictor: Predictor::new(&arch),
            w: vec![0.0; p],
            noise: vec![0.0; p],
            g_train: vec![0.0; p],
            g_test: vec![0.0; p],
            grad_gen_w: vec![0.0; p * d],
            grad_gen_b: vec![0.0; p],
            grad_dec: vec![0.0; arch.table_len(d)],
            dec_touched: Vec::new(),
            dec_seen: vec![false; arch.context_len * 256],
            ranges: Vec::new(),
            train_ranges: Vec::new(),
            rho: Vec::new(),
            ws: Workspace::new(&layout),
            rejected: 0,
            last_encoder_grad: (Vec::new(), Vec::new()),
            dec_touched_grads: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn layout(&self) -> &PredictorLayout {
        &self.predictor.layout
    }

    /// Steps rejected for non-finite values so far.
    pub fn rejected_steps(&self) -> u64 {
        self.rejected
    }

    /// One update on `batch`; its last element is the pseudo-test sample.
    pub fn train_step<R: Rng + ?Sized>(&mut self, state: &mut TrainState, batch: &[Sample], rng: &mut R) -> StepReport {
        let refs: Vec<&Sample> = batch.iter().collect();
        self.step_refs(state, &refs, rng, false)
    }

    /// Replays a step with fixed draws.
    pub fn train_step_with(&mut self, state: &mut TrainState, batch: &[Sample], draws: &StepDraws) -> StepReport {
        let refs: Vec<&Sample> = batch.iter().collect();
        self.set_ranges(&refs, draws.train_index, false);
        self.noise.copy_from_slice(&draws.w_noise);
        self.step_inner(state, &refs, draws.train_index, &draws.z_noise, false, true)
    }

    /// The step's gradients without applying them.
    pub fn step_gradient(&mut self, state: &TrainState, batch: &[Sample], draws: &StepDraws) -> StepGradient {
        let refs: Vec<&Sample> = batch.iter().collect();
        self.set_ranges(&refs, draws.train_index, false);
        self.noise.copy_from_slice(&draws.w_noise);
        let mut scratch = state.clone();
        let report = self.step_inner(&mut scratch, &refs, draws.train_index, &draws.z_noise, false, false);
        let d = self.config.arch.latent_dim;
        let p = self.predictor.layout.len;
        let mut v = Vec::new();
        for r in &self.train_ranges {
            for j in r.clone() {
                for k in 0..d {
                    v.push((j * d + k, self.grad_gen_w[j * d + k]));
                }
                v.push((p * d + j, self.grad_gen_b[j]));
            }
        }
        let (dm, dt) = self.last_encoder_grad.clone();
        let enc_base = p * d + p;
        let enc_len = state.v.enc_mean.len();
        for row in encoder_rows(refs[refs.len() - 1].context.bytes(), &self.config.arch) {
            for k in 0..d {
                v.push((enc_base + row + k, dm[k]));
                v.push((enc_base + enc_len + row + k, dt[k]));
            }
        }
        let u = self.dec_touched_grads.clone();
        StepGradient { v, u, correlation: report.correlation }
    }

    fn step_refs<R: Rng + ?Sized>(
        &mut self,
        state: &mut TrainState,
        batch: &[&Sample],
        rng: &mut R,
        monitor: bool,
    ) -> StepReport {
        let b = batch.len();
        let i = rng.random_range(0..b - 1);
        let z_noise: Vec<f64> = (0..self.config.arch.latent_dim).map(|_| StandardNormal.sample(rng)).collect();
        self.set_ranges(batch, i, monitor);
        for r in &self.ranges {
            for j in r.clone() {
                self.noise[j] = StandardNormal.sample(rng);
            }
        }
        self.step_inner(state, batch, i, &z_noise, monitor, true)
    }

    /// Rows of `w` read by this step. With `monitor`, every batch context's rows.
    fn set_ranges(&mut self, batch: &[&Sample], i: usize, monitor: bool) {
        let lay = self.predictor.layout;
        let e = lay.embed_dim;
        let test = batch[batch.len() - 1].context.bytes();
        let train = batch[i].context.bytes();
        self.ranges.clear();
        self.train_ranges.clear();
        for p in 0..lay.context_len {
            let rt = lay.emb_row(p, train[p]);
            self.train_ranges.push(rt..rt + e);
            let mut rows = vec![rt, lay.emb_row(p, test[p])];
            if monitor {
                rows.extend(batch.iter().map(|s| lay.emb_row(p, s.context.bytes()[p])));
            }
            rows.sort_unstable();
            rows.dedup();
            self.ranges.extend(rows.into_iter().map(|r| r..r + e));
        }
        self.ranges.push(lay.dense());
        self.train_ranges.push(lay.dense());
    }

    fn step_inner(
        &mut self,
        state: &mut TrainState,
        batch: &[&Sample],
        i: usize,
        z_noise: &[f64],
        monitor: bool,
        apply: bool,
    ) -> StepReport {
        let arch = self.config.arch;
        let d = arch.latent_dim;
        let lay = self.predictor.layout;
        let b = batch.len();
        let test = batch[b - 1];
        let train = batch[i];
        let (ctx_t, ctx_i) = (test.context.bytes(), train.context.bytes());

        let pass = EncoderPass::run(ctx_t, &state.v, z_noise);
        let z = pass.z.clone();
        for r in &self.ranges {
            generate_range(&state.v, &z, r.clone(), Some(&self.noise), &mut self.w);
        }

        let embeds: Vec<Vec<f64>> = batch.iter().map(|s| state.u.embed(s.context.bytes())).collect();
        let (logs, free): (Vec<f64>, Vec<bool>) = embeds.iter().map(|e| log_score(e, &z)).unzip();
        importance_from_logs(&logs, &mut self.rho);
        let rho_i = self.rho[i];

        let mut report = StepReport { train_index: i, rho: self.rho.clone(), ..Default::default() };

        let ok_train = self.predictor.forward(ctx_i, &self.w, &mut self.ws);
        report.train_loss = -self.ws.probs[train.target as usize].ln();
        if ok_train {
            self.predictor.backward(ctx_i, train.target, &self.w, &mut self.ws, &mut self.g_train);
        }
        let ok_test = self.predictor.forward(ctx_t, &self.w, &mut self.ws);
        report.test_loss = -self.ws.probs[test.target as usize].ln();
        if ok_test {
            self.predictor.backward(ctx_t, test.target, &self.w, &mut self.ws, &mut self.g_test);
        }

        // correlation over rows both samples read
        let mut corr = 0.0;
        let mut shared: Vec<Range<usize>> = (0..lay.context_len)
            .filter(|&p| ctx_i[p] == ctx_t[p])
            .map(|p| {
                let r = lay.emb_row(p, ctx_i[p]);
                r..r + lay.embed_dim
            })
            .collect();
        shared.push(lay.dense());
        for r in shared {
            for j in r {
                corr += self.g_train[j] * self.g_test[j] / state.v.gen_bias.precision[j];
            }
        }
        corr /= b as f64;
        report.correlation = corr;

        // d rho_i / d z through the decoder scores
        let jac = importance_log_jacobian(&self.rho, i, &free);
        let mut d_a_dz = vec![0.0; d];
        for (e, &a) in embeds.iter().zip(&jac) {
            for k in 0..d {
                d_a_dz[k] += report.train_loss * a * e[k];
            }
        }
        // pullback of rho_i * l_i through w = W z + b
        let wm = &state.v.gen_weight.mean;
        for r in &self.train_ranges {
            for j in r.clone() {
                let g = rho_i * self.g_train[j];
                self.grad_gen_b[j] = g;
                let row = j * d;
                for k in 0..d {
                    self.grad_gen_w[row + k] = g * z[k];
                    d_a_dz[k] += g * wm[row + k];
                }
            }
        }
        let (dm, dt) = pass.backward(&embeds[b - 1], &d_a_dz);

        // decoder: c * d rho_i / d u
        for &row in &self.dec_touched {
            self.dec_seen[row / d] = false;
        }
        self.dec_touched.clear();
        for (s, &a) in batch.iter().zip(&jac) {
            if a == 0.0 {
                continue;
            }
            for (p, &c) in s.context.bytes().iter().enumerate() {
                let row = state.u.row(p, c);
                if !self.dec_seen[row / d] {
                    self.dec_seen[row / d] = true;
                    self.dec_touched.push(row);
                    self.grad_dec[row..row + d].iter_mut().for_each(|g| *g = 0.0);
                }
                for k in 0..d {
                    self.grad_dec[row + k] += corr * a * z[k];
                }
            }
        }

        let finite = ok_train
            && ok_test
            && report.train_loss.is_finite()
            && report.test_loss.is_finite()
            && corr.is_finite()
            && dm.iter().chain(&dt).all(|g| g.is_finite())
            && self.train_ranges.iter().all(|r| {
                r.clone().all(|j| {
                    self.grad_gen_b[j].is_finite() && self.grad_gen_w[j * d..j * d + d].iter().all(|g| g.is_finite())
                })
            })
            && self.dec_touched.iter().all(|&row| self.grad_dec[row..row + d].iter().all(|g| g.is_finite()));

        self.last_encoder_grad = (dm.clone(), dt.clone());
        self.dec_touched_grads.clear();
        for &row in &self.dec_touched {
            for k in 0..d {
                self.dec_touched_grads.push((row + k, self.grad_dec[row + k]));
            }
        }

        if !finite {
            self.rejected += 1;
            log::warn!("rejected step {}: non-finite loss or gradient", state.steps);
            return report;
        }

        if monitor {
            let zc = LatentCode::new(z.clone());
            let refs: Vec<&Sample> = batch.to_vec();
            report.complete_loss = Some(complete_loss_refs(&self.predictor, state, &refs, &zc, &self.w));
        }
        report.accepted = true;
        if !apply {
            return report;
        }

        let eps = self.config.learning_rate();
        for r in &self.train_ranges {
            for j in r.clone() {
                state.v.gen_bias.update(j, self.grad_gen_b[j], eps, 1.0);
                for k in 0..d {
                    state.v.gen_weight.update(j * d + k, self.grad_gen_w[j * d + k], eps, 1.0);
                }
            }
        }
        for row in encoder_rows(ctx_t, &arch) {
            for k in 0..d {
                state.v.enc_mean.update(row + k, dm[k], eps, 1.0);
                state.v.enc_logvar.update(row + k, dt[k], eps, 1.0);
            }
        }
        let direction = self.config.attention_sign.direction();
        for &row in &self.dec_touched {
            for k in 0..d {
                state.u.table.update(row + k, self.grad_dec[row + k], eps, direction);
            }
        }
        state.steps += 1;
        report
    }
}

/// Single-draw estimate of `L - l L - R` with `L = sum_i rho_i l_i` over the
/// training part of `batch` and `l` the pseudo-test loss, each capped at
/// [`LOSS_CAP`]. `w` must be valid on every row the batch contexts read.
pub fn complete_loss(state: &TrainState, batch: &[Sample], z: &LatentCode, w: &[f64]) -> f64 {
    let predictor = Predictor::new(&state.v.arch);
    let refs: Vec<&Sample> = batch.iter().collect();
    complete_loss_refs(&predictor, state, &refs, z, w)
}

fn complete_loss_refs(predictor: &Predictor, state: &TrainState, batch: &[&Sample], z: &LatentCode, w: &[f64]) -> f64 {
    let b = batch.len();
    let mut ws = Workspace::new(&predictor.layout);
    let scores: Vec<f64> = batch.iter().map(|s| attention::decoder_score(s.context.bytes(), z, &state.u)).collect();
    let mut loss = |s: &Sample| {
        if predictor.forward(s.context.bytes(), w, &mut ws) {
            (-ws.probs[s.target as usize].ln()).min(LOSS_CAP)
        } else {
            LOSS_CAP
        }
    };
    let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
    let mut rho = Vec::new();
    importance_from_logs(&logs, &mut rho);
    let train_total: f64 = batch[..b - 1].iter().zip(&rho).map(|(s, r)| r * loss(s)).sum();
    let test = loss(batch[b - 1]);
    let reg = attention::regularizer(batch[b - 1].context.bytes(), z, &state.u, &state.v);
    complete_loss_value(train_total, test, reg)
}

/// `L - l L - R`.
pub fn complete_loss_value(train_total: f64, test_loss: f64, regularizer: f64) -> f64 {
    train_total - test_loss * train_total - regularizer
}

/// Trains on `corpus` and returns the model snapshot.
pub fn train(corpus: &[u8], config: &TrainConfig) -> Result<ModelSnapshot> {
    train_with(corpus, config, &mut ())
}

pub fn train_with(corpus: &[u8], config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<ModelSnapshot> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(BanError::EmptyCorpus);
    }
    if corpus.len() < config.batch {
        return Err(BanError::CorpusTooShort { len: corpus.len(), batch: config.batch });
    }
    let samples = make_samples(corpus, config.arch.context_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState::new(config.arch, &mut rng);
    let mut trainer = Trainer::new(config.clone())?;
    let b = config.batch;
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut bits_sum = 0.0;
        let mut bits_count = 0usize;
        let mut batch_start = 0;
        while batch_start < n {
            // a short final batch is filled from the end of the permutation
            let lo = if batch_start + b <= n { batch_start } else { n - b };
            let members = &order[lo..lo + b];
            batch_start += b;
            for r in 0..b {
                // member r plays the pseudo-test sample
                let mut batch: Vec<&Sample> =
                    members.iter().enumerate().filter(|&(k, _)| k != r).map(|(_, &m)| &samples[m]).collect();
                batch.push(&samples[members[r]]);
                let report = trainer.step_refs(&mut state, &batch, &mut rng, r == 0);
                if report.accepted {
                    bits_sum += report.test_loss / std::f64::consts::LN_2;
                    bits_count += 1;
                    if let Some(c) = report.complete_loss {
                        loss_sum += c;
                        loss_count += 1;
                    }
                }
                observer.on_step(&report, &state);
            }
        }
        state.epoch = epoch + 1;
        let log = EpochLog {
            epoch: epoch + 1,
            mean_complete_loss: loss_sum / loss_count.max(1) as f64,
            bits_per_byte: bits_sum / bits_count.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
            rejected_steps: trainer.rejected_steps(),
        };
        log::info!("{log}");
        observer.on_epoch(&log);
    }

    Ok(ModelSnapshot::new(
        TrainMeta { epochs: config.epochs, batch: config.batch as u32, seed: config.seed, attention_sign: config.attention_sign },
        state.v,
        state.u,
    ))
}
