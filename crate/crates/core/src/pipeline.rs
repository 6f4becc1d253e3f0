//! Container framing and the compress/decompress loop.
//!
//! ```text
//! "BANZ" | version u8 | l u8 | d u8 | flags u8 | original length u64 | model hash u64
//! [flags & EMBEDDED: snapshot length u64 | snapshot bytes]
//! payload
//! ```
//!
//! Every byte is predicted from its zero-padded context through the encoder
//! mean and the generator's weight means, so compressor and decompressor see
//! identical quantized PMFs.

use fnv::FnvHashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::encode;
use crate::coder::{quantize_probs, QuantizedPmf, RangeDecoder, RangeEncoder, TOTAL};
use crate::error::{BanError, Result};
use crate::gaussnet::{dot, generate_range, softmax, Predictor, Workspace, ALPHABET};
use crate::seqmodel::Context;
use crate::snapshot::ModelSnapshot;

pub const MAGIC: &[u8; 4] = b"BANZ";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_EMBEDDED: u8 = 1;
/// z drawn from the encoder posterior with a generator seeded by the model hash.
pub const FLAG_SAMPLED_Z: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LatentMode {
    #[default]
    Mean,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CompressOptions {
    pub embed_model: bool,
    pub latent_mode: LatentMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u8,
    pub context_len: u8,
    pub latent_dim: u8,
    pub flags: u8,
    pub original_len: u64,
    pub model_hash: u64,
}

impl ContainerHeader {
    pub fn embedded(&self) -> bool {
        self.flags & FLAG_EMBEDDED != 0
    }

    pub fn latent_mode(&self) -> LatentMode {
        if self.flags & FLAG_SAMPLED_Z != 0 {
            LatentMode::Sampled
        } else {
            LatentMode::Mean
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = self.version;
        out[5] = self.context_len;
        out[6] = self.latent_dim;
        out[7] = self.flags;
        out[8..16].copy_from_slice(&self.original_len.to_le_bytes());
        out[16..24].copy_from_slice(&self.model_hash.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(BanError::BadMagic { expected: "BANZ" });
        }
        if bytes.len() < HEADER_LEN {
            return Err(BanError::Truncated("container header"));
        }
        if bytes[4] != VERSION {
            return Err(BanError::UnsupportedVersion(bytes[4] as u32));
        }
        let flags = bytes[7];
        if flags & !(FLAG_EMBEDDED | FLAG_SAMPLED_Z) != 0 {
            return Err(BanError::Corrupt(format!("unknown container flags {flags:#04x}")));
        }
        Ok(ContainerHeader {
            version: bytes[4],
            context_len: bytes[5],
            latent_dim: bytes[6],
            flags,
            original_len: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            model_hash: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        })
    }
}

/// A parsed container. The payload is the raw range-coder output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub model: Option<Vec<u8>>,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        if let Some(m) = &self.model {
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            out.extend_from_slice(m);
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header = ContainerHeader::parse(bytes)?;
        let mut rest = &bytes[HEADER_LEN..];
        let model = if header.embedded() {
            if rest.len() < 8 {
                return Err(BanError::Truncated("embedded model"));
            }
            let n = u64::from_le_bytes(rest[..8].try_into().unwrap());
            rest = &rest[8..];
            if (rest.len() as u64) < n {
                return Err(BanError::Truncated("embedded model"));
            }
            let (m, tail) = rest.split_at(n as usize);
            rest = tail;
            Some(m.to_vec())
        } else {
            None
        };
        Ok(Container { header, model, payload: rest.to_vec() })
    }
}

/// Per-stream accounting from one compression run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodingStats {
    pub symbols: u64,
    /// Σ −log₂(count/65536) over the coded symbols.
    pub quantized_bits: f64,
    /// Σ −log₂ p before quantization.
    pub model_bits: f64,
    pub payload_bytes: usize,
    /// Largest |Σp − 1| over all PMFs produced.
    pub max_pmf_sum_error: f64,
    /// Smallest quantized count seen.
    pub min_count: u32,
}

impl Default for CodingStats {
    fn default() -> Self {
        CodingStats {
            symbols: 0,
            quantized_bits: 0.0,
            model_bits: 0.0,
            payload_bytes: 0,
            max_pmf_sum_error: 0.0,
            min_count: TOTAL,
        }
    }
}

impl CodingStats {
    pub fn payload_bits_per_byte(&self) -> f64 {
        if self.symbols == 0 {
            0.0
        } else {
            self.payload_bytes as f64 * 8.0 / self.symbols as f64
        }
    }
}

/// Deterministic context → PMF evaluation for a fixed snapshot.
///
/// Only the embedding rows and hidden layer of the predictor are generated
/// per context. Each output logit is `W_out(z) act + b_out(z)`, which is
/// linear in `y = (act, 1) ⊗ (z, 1)`, so it is computed as one dot product
/// with a precomputed row of the generator.
pub struct PredictionPath<'a> {
    snapshot: &'a ModelSnapshot,
    predictor: Predictor,
    ws: Workspace,
    w: Vec<f64>,
    z: Vec<f64>,
    sampler: Option<ChaCha8Rng>,
    /// `[256 x (H+1)(d+1)]`, row `a` holding the generator rows of `out_w[a, ..]`
    /// then `out_b[a]`, each as `d` weights followed by the bias.
    out_gen: Vec<f64>,
    y: Vec<f64>,
}

impl<'a> PredictionPath<'a> {
    pub fn new(snapshot: &'a ModelSnapshot, mode: LatentMode) -> Self {
        let predictor = Predictor::new(&snapshot.arch);
        let sampler = match mode {
            LatentMode::Mean => None,
            LatentMode::Sampled => Some(ChaCha8Rng::seed_from_u64(snapshot.hash())),
        };
        let lay = predictor.layout;
        let (d, h) = (snapshot.arch.latent_dim, lay.hidden);
        let v = &snapshot.v;
        let row_len = (h + 1) * (d + 1);
        let mut out_gen = Vec::with_capacity(ALPHABET * row_len);
        for a in 0..ALPHABET {
            for j in (lay.out_w + a * h..lay.out_w + (a + 1) * h).chain([lay.out_b + a]) {
                out_gen.extend_from_slice(&v.gen_weight.mean[j * d..(j + 1) * d]);
                out_gen.push(v.gen_bias.mean[j]);
            }
        }
        PredictionPath {
            snapshot,
            out_gen,
            y: vec![0.0; row_len],
            ws: Workspace::new(&lay),
            w: vec![0.0; lay.len],
            z: vec![0.0; d],
            predictor,
            sampler,
        }
    }

    /// Probabilities for the next byte after `context`.
    pub fn pmf(&mut self, context: &[u8]) -> Result<&[f64]> {
        let v = &self.snapshot.v;
        let post = encode(context, v);
        match &mut self.sampler {
            None => self.z.copy_from_slice(&post.mean),
            Some(rng) => {
                for k in 0..self.z.len() {
                    let xi: f64 = rng.sample(StandardNormal);
                    self.z[k] = post.mean[k] + post.variance[k].sqrt() * xi;
                }
            }
        }
        let lay = &self.predictor.layout;
        for (p, &c) in context.iter().enumerate() {
            let r = lay.emb_row(p, c);
            generate_range(v, &self.z, r..r + lay.embed_dim, None, &mut self.w);
        }
        generate_range(v, &self.z, lay.hid_w..lay.out_w, None, &mut self.w);
        self.predictor.hidden(context, &self.w, &mut self.ws);

        let d1 = self.z.len() + 1;
        for (j, chunk) in self.y.chunks_exact_mut(d1).enumerate() {
            let act = self.ws.act.get(j).copied().unwrap_or(1.0);
            for (yk, zk) in chunk.iter_mut().zip(self.z.iter().chain([&1.0])) {
                *yk = act * zk;
            }
        }
        for (logit, row) in self.ws.logits.iter_mut().zip(self.out_gen.chunks_exact(self.y.len())) {
            *logit = dot(row, &self.y);
        }
        if !softmax(&mut self.ws) {
            return Err(BanError::ModelDefect("non-finite logits on the prediction path".into()));
        }
        Ok(&self.ws.probs)
    }
}

/// Distinct contexts remembered before the PMF cache is flushed.
const PMF_CACHE_LIMIT: usize = 4096;

/// A coding PMF together with the probabilities it was quantized from.
struct CodedPmf {
    probs: Vec<f64>,
    sum_error: f64,
    q: QuantizedPmf,
}

impl CodedPmf {
    fn new(probs: &[f64]) -> Self {
        let sum: f64 = probs.iter().sum();
        CodedPmf { probs: probs.to_vec(), sum_error: (sum - 1.0).abs(), q: quantize_probs(probs) }
    }
}

/// Per-position coding PMFs. With the encoder mean the PMF depends only on the
/// context, so repeated contexts are served from a cache; sampled z never repeats.
struct PmfSource<'a> {
    path: PredictionPath<'a>,
    cache: Option<FnvHashMap<Vec<u8>, CodedPmf>>,
    last: Option<CodedPmf>,
}

impl<'a> PmfSource<'a> {
    fn new(snapshot: &'a ModelSnapshot, mode: LatentMode) -> Self {
        let cache = (mode == LatentMode::Mean).then(FnvHashMap::default);
        PmfSource { path: PredictionPath::new(snapshot, mode), cache, last: None }
    }

    fn get(&mut self, context: &[u8]) -> Result<&CodedPmf> {
        let Some(cache) = &mut self.cache else {
            return Ok(self.last.insert(CodedPmf::new(self.path.pmf(context)?)));
        };
        if !cache.contains_key(context) {
            if cache.len() >= PMF_CACHE_LIMIT {
                cache.clear();
            }
            cache.insert(context.to_vec(), CodedPmf::new(self.path.pmf(context)?));
        }
        Ok(&cache[context])
    }
}

pub fn compress(input: &[u8], snapshot: &ModelSnapshot) -> Result<Vec<u8>> {
    Ok(compress_with(input, snapshot, &CompressOptions::default())?.0)
}

pub fn compress_with(input: &[u8], snapshot: &ModelSnapshot, opts: &CompressOptions) -> Result<(Vec<u8>, CodingStats)> {
    let model_bytes = snapshot.to_bytes();
    let hash = crate::snapshot::fnv64(&model_bytes);
    let mut flags = 0;
    if opts.embed_model {
        flags |= FLAG_EMBEDDED;
    }
    if opts.latent_mode == LatentMode::Sampled {
        flags |= FLAG_SAMPLED_Z;
    }
    let header = ContainerHeader {
        version: VERSION,
        context_len: snapshot.arch.context_len as u8,
        latent_dim: snapshot.arch.latent_dim as u8,
        flags,
        original_len: input.len() as u64,
        model_hash: hash,
    };
    let mut stats = CodingStats::default();
    let mut source = PmfSource::new(snapshot, opts.latent_mode);
    let mut context = Context::empty(snapshot.arch.context_len);
    let mut enc = RangeEncoder::new();
    for &byte in input {
        let c = source.get(context.bytes())?;
        stats.max_pmf_sum_error = stats.max_pmf_sum_error.max(c.sum_error);
        stats.model_bits -= c.probs[byte as usize].log2();
        stats.min_count = stats.min_count.min(c.q.min_count());
        stats.quantized_bits += c.q.bits(byte);
        enc.encode(&c.q, byte);
        context.push(byte);
    }
    stats.symbols = input.len() as u64;
    let payload = enc.finish();
    stats.payload_bytes = payload.len();
    let container = Container { header, model: opts.embed_model.then_some(model_bytes), payload };
    Ok((container.to_bytes(), stats))
}

/// Fewest bits a symbol can cost: the largest count a PMF can give one byte.
fn min_symbol_bits() -> f64 {
    (TOTAL as f64 / (TOTAL - 255) as f64).log2()
}

/// Inverts [`compress`]. `model` may be omitted when the container embeds one;
/// an embedded model takes precedence.
pub fn decompress(bytes: &[u8], model: Option<&ModelSnapshot>) -> Result<Vec<u8>> {
    let container = Container::parse(bytes)?;
    let header = container.header;
    let embedded;
    let snapshot = match (&container.model, model) {
        (Some(m), _) => {
            embedded = ModelSnapshot::from_bytes(m)?;
            &embedded
        }
        (None, Some(s)) => s,
        (None, None) => return Err(BanError::MissingModel),
    };
    let found = snapshot.hash();
    if found != header.model_hash {
        return Err(BanError::ModelHashMismatch { expected: header.model_hash, found });
    }
    if snapshot.arch.context_len != header.context_len as usize || snapshot.arch.latent_dim != header.latent_dim as usize {
        return Err(BanError::Corrupt("header dimensions disagree with the model".into()));
    }
    let payload = &container.payload;
    // every symbol costs a minimum number of bits, so a payload bounds the length it can hold
    let capacity = (payload.len() as f64 * 8.0 + 64.0) / min_symbol_bits();
    if header.original_len as f64 > capacity {
        return Err(BanError::Truncated("range-coded payload"));
    }
    let n = header.original_len as usize;
    let mut out = Vec::with_capacity(n);
    let mut source = PmfSource::new(snapshot, header.latent_mode());
    let mut context = Context::empty(snapshot.arch.context_len);
    let mut dec = RangeDecoder::new(payload);
    for _ in 0..n {
        let byte = dec.decode(&source.get(context.bytes())?.q)?;
        out.push(byte);
        context.push(byte);
    }
    dec.finish()?;
    Ok(out)
}
