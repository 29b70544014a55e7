//! Bigram softmax proxy language model with analytic gradients.
//!
//! Parameters are a `V x V` logit table: row = context token, column = next
//! token. Losses are mean next-token cross-entropy in nats over all adjacent
//! pairs of a batch.

use std::io::{Read, Write};

use crate::corpus::SourceKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyParams {
    vocab_size: usize,
    logits: Vec<f64>,
}

impl ProxyParams {
    pub fn zeros(vocab_size: usize) -> Self {
        ProxyParams {
            vocab_size,
            logits: vec![0.0; vocab_size * vocab_size],
        }
    }

    pub fn from_logits(vocab_size: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Input("vocab_size must be positive".into()));
        }
        if logits.len() != vocab_size * vocab_size {
            return Err(Error::Input(format!(
                "expected {} logits for vocab {vocab_size}, got {}",
                vocab_size * vocab_size,
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("logit {i} is not finite")));
        }
        Ok(ProxyParams { vocab_size, logits })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn parameter_count(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.logits[context * self.vocab_size..(context + 1) * self.vocab_size]
    }

    const MAGIC: &'static [u8; 4] = b"XDGP";
    const VERSION: u32 = 1;

    /// Binary checkpoint: magic, version, vocab size, parameter count, then
    /// little-endian f64 values.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        w.write_all(&(self.logits.len() as u64).to_le_bytes())?;
        for x in &self.logits {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| Error::io("<proxy checkpoint>", e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::Input("not a proxy parameter checkpoint".into()));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != Self::VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let vocab_size = read_u64(&mut r).map_err(io)? as usize;
        let count = read_u64(&mut r).map_err(io)? as usize;
        if vocab_size.checked_mul(vocab_size) != Some(count) {
            return Err(Error::Input(format!(
                "checkpoint header mismatch: vocab {vocab_size}, {count} parameters"
            )));
        }
        let mut logits = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(io)?;
            logits.push(f64::from_le_bytes(buf));
        }
        ProxyParams::from_logits(vocab_size, logits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.logits.len());
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Fixed-length token windows drawn from one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub source_key: SourceKey,
    sequences: Vec<Vec<u32>>,
}

impl TokenBatch {
    pub fn new(source_key: SourceKey, sequences: Vec<Vec<u32>>) -> Result<Self> {
        if let Some(first) = sequences.first() {
            if sequences.iter().any(|s| s.len() != first.len()) {
                return Err(Error::Input(format!(
                    "batch for {source_key} mixes sequence lengths"
                )));
            }
        }
        Ok(TokenBatch {
            source_key,
            sequences,
        })
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn pair_count(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.len().saturating_sub(1))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub source_key: SourceKey,
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn dot(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    /// Nats per predicted token.
    pub mean_loss: f64,
    /// Number of predicted tokens.
    pub token_count: usize,
}

/// Dense (context, next) pair counts.
struct PairCounts {
    vocab_size: usize,
    counts: Vec<u32>,
    row_totals: Vec<u32>,
    pairs: usize,
}

impl PairCounts {
    fn from_sequences<'a>(
        vocab_size: usize,
        sequences: impl IntoIterator<Item = &'a [u32]>,
    ) -> Result<Self> {
        let mut counts = vec![0u32; vocab_size * vocab_size];
        let mut row_totals = vec![0u32; vocab_size];
        let mut pairs = 0;
        for seq in sequences {
            if let Some(&bad) = seq.iter().find(|&&t| t as usize >= vocab_size) {
                return Err(Error::Input(format!(
                    "token id {bad} is outside vocabulary {vocab_size}"
                )));
            }
            for w in seq.windows(2) {
                let (c, n) = (w[0] as usize, w[1] as usize);
                counts[c * vocab_size + n] += 1;
                row_totals[c] += 1;
                pairs += 1;
            }
        }
        if pairs == 0 {
            return Err(Error::Input(
                "batch contains no (context, next) pairs".into(),
            ));
        }
        Ok(PairCounts {
            vocab_size,
            counts,
            row_totals,
            pairs,
        })
    }

    fn used_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vocab_size).filter(|&c| self.row_totals[c] > 0)
    }

    fn row(&self, c: usize) -> &[u32] {
        &self.counts[c * self.vocab_size..(c + 1) * self.vocab_size]
    }
}

/// `log(sum(exp(row)))` split as `(max, ln_1p(sum of the others))`, so
/// that nearly-one-hot rows keep their precision.
fn log_sum_exp(row: &[f64]) -> (f64, f64) {
    let (argmax, max) =
        row.iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, x)| if x > acc.1 { (i, x) } else { acc },
            );
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max, rest.ln_1p())
}

fn loss_from_counts(params: &ProxyParams, counts: &PairCounts) -> LossStats {
    let mut total = 0.0;
    for c in counts.used_rows() {
        let row = params.row(c);
        let (max, tail) = log_sum_exp(row);
        for (n, &k) in counts.row(c).iter().enumerate() {
            if k > 0 {
                total += f64::from(k) * ((max - row[n]) + tail);
            }
        }
    }
    LossStats {
        mean_loss: total / counts.pairs as f64,
        token_count: counts.pairs,
    }
}

fn check_nonempty(batch: &TokenBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Input(format!(
            "empty batch for {}",
            batch.source_key
        )));
    }
    Ok(())
}

pub fn forward_loss(params: &ProxyParams, batch: &TokenBatch) -> Result<LossStats> {
    check_nonempty(batch)?;
    let counts =
        PairCounts::from_sequences(params.vocab_size, batch.sequences.iter().map(Vec::as_slice))?;
    Ok(loss_from_counts(params, &counts))
}

/// Analytic gradient of the mean loss: for every context row,
/// `(row_total * softmax(row) - counts(row)) / pairs`. Rows never used as
/// context get exactly zero.
pub fn per_source_gradient(
    params: &ProxyParams,
    batch: &TokenBatch,
) -> Result<(GradientVector, LossStats)> {
    check_nonempty(batch)?;
    let v = params.vocab_size;
    let counts = PairCounts::from_sequences(v, batch.sequences.iter().map(Vec::as_slice))?;
    let stats = loss_from_counts(params, &counts);
    let scale = 1.0 / counts.pairs as f64;
    let mut grad = vec![0.0; v * v];
    for c in counts.used_rows() {
        let row = params.row(c);
        let (max, tail) = log_sum_exp(row);
        let total = f64::from(counts.row_totals[c]);
        let out = &mut grad[c * v..(c + 1) * v];
        for (n, (g, &k)) in out.iter_mut().zip(counts.row(c)).enumerate() {
            *g = (total * ((row[n] - max) - tail).exp() - f64::from(k)) * scale;
        }
    }
    Ok((
        GradientVector {
            source_key: batch.source_key.clone(),
            values: grad,
        },
        stats,
    ))
}

/// Central-difference gradient, one coordinate at a time. Test oracle.
pub fn finite_diff_gradient(
    params: &ProxyParams,
    batch: &TokenBatch,
    h: f64,
) -> Result<GradientVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Input(format!("step h must be positive, got {h}")));
    }
    check_nonempty(batch)?;
    let counts =
        PairCounts::from_sequences(params.vocab_size, batch.sequences.iter().map(Vec::as_slice))?;
    let mut probe = params.clone();
    let mut values = Vec::with_capacity(params.parameter_count());
    for j in 0..params.parameter_count() {
        let orig = probe.logits[j];
        probe.logits[j] = orig + h;
        let up = loss_from_counts(&probe, &counts).mean_loss;
        probe.logits[j] = orig - h;
        let down = loss_from_counts(&probe, &counts).mean_loss;
        probe.logits[j] = orig;
        values.push((up - down) / (2.0 * h));
    }
    Ok(GradientVector {
        source_key: batch.source_key.clone(),
        values,
    })
}

/// `params - step_size * direction`, elementwise.
pub fn apply_update(
    params: &ProxyParams,
    direction: &[f64],
    step_size: f64,
) -> Result<ProxyParams> {
    if direction.len() != params.parameter_count() {
        return Err(Error::Numeric(format!(
            "update has {} entries, parameters have {}",
            direction.len(),
            params.parameter_count()
        )));
    }
    if direction.iter().any(|d| !d.is_finite()) || !step_size.is_finite() {
        return Err(Error::Numeric(
            "non-finite update direction or step size".into(),
        ));
    }
    let logits = params
        .logits
        .iter()
        .zip(direction)
        .map(|(p, d)| p - step_size * d)
        .collect();
    ProxyParams::from_logits(params.vocab_size, logits)
}

/// `exp` of the mean next-token cross-entropy over one token stream.
pub fn perplexity(params: &ProxyParams, stream: &[u32]) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::Input(format!(
            "perplexity needs at least 2 tokens, got {}",
            stream.len()
        )));
    }
    let counts = PairCounts::from_sequences(params.vocab_size, [stream])?;
    Ok(loss_from_counts(params, &counts).mean_loss.exp())
}

/// Loss-and-gradient provider the optimizer trains against. The bigram
/// model is the reference implementation.
pub trait GradientProvider: Sync {
    fn loss_and_gradient(
        &self,
        params: &ProxyParams,
        batch: &TokenBatch,
    ) -> Result<(GradientVector, LossStats)>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BigramModel;

impl GradientProvider for BigramModel {
    fn loss_and_gradient(
        &self,
        params: &ProxyParams,
        batch: &TokenBatch,
    ) -> Result<(GradientVector, LossStats)> {
        per_source_gradient(params, batch)
    }
}
