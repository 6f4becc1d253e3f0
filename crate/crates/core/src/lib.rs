//! Lossless byte-stream compression with a Bayesian attention network as the
//! probability model.
//!
//! The model predicts each byte from a fixed window of preceding bytes. The
//! window is mapped to a latent code by an encoder; the predictor's weights are
//! an affine function of that code, with every trainable scalar carried as a
//! Gaussian (mean, precision) pair. During training a decoder scores how
//! relevant each training sample is to the sample being predicted, and those
//! scores become normalized importance factors on the training losses.
//!
//! Modules:
//! - [`seqmodel`]: samples, contexts and sequence code lengths.
//! - [`gaussnet`]: the predictor MLP and the latent-to-weights generator.
//! - [`attention`]: encoder, decoder, importance factors and the attention gradient.
//! - [`trainer`]: the recursive mean/precision update rules.
//! - [`snapshot`]: the versioned model file.
//! - [`oracle`]: brute-force quadrature checks of the underlying identities.
//! - [`coder`]: PMF quantization and the range coder.
//! - [`pipeline`]: the container format and compress/decompress.
//! - [`config`]: `key = value` training configuration files.
//! - [`verify`]: the self-check report behind `banzip verify`.

pub mod attention;
pub mod coder;
pub mod config;
mod error;
pub mod gaussnet;
pub mod gradcheck;
pub mod oracle;
pub mod pipeline;
pub mod seqmodel;
pub mod snapshot;
pub mod trainer;
pub mod verify;

pub use error::{BanError, Result};
pub use gaussnet::{Architecture, GaussianHyper, HyperBlock, HyperNetParams, Pmf, PredictorWeights};
pub use attention::{DecoderParams, EncoderPosterior, ImportanceVector, LatentCode};
pub use coder::QuantizedPmf;
pub use pipeline::{compress, decompress, CompressOptions, LatentMode};
pub use seqmodel::{Context, Sample};
pub use snapshot::ModelSnapshot;
pub use trainer::{train, AttentionSign, TrainConfig};
