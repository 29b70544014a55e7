//! The bi-level reweighting loop.
//!
//! Each step `t`:
//! 1. draws `batch_instances` windows, choosing a source by `alpha(t)` and a
//!    document uniformly within it;
//! 2. computes one gradient per sampled source at `theta(t)`;
//! 3. inner step: `theta(t+1) = theta(t)(1 - lr wd) - lr sum_i alpha_i g_i`;
//! 4. alignment: `W_i = <g_i, sum_j g_j>`;
//! 5. outer step: `alpha_i * exp(lr W_i / mu)`, renormalized, then projected
//!    onto the floor-constrained simplex when thresholded.
//!
//! The same per-source gradients feed both updates. Sources not sampled in a
//! step have zero gradient and `W = 0`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Source, SourceKey};
use crate::error::{Error, Result};
use crate::proxy::{
    apply_update, read_u32, read_u64, BigramModel, GradientProvider, GradientVector, LossStats,
    ProxyParams, TokenBatch,
};
use crate::seed::{categorical, derive_seed};
use crate::simplex::{project_floor_with, ProjectionMode, WeightVector};
use crate::weights::{Trajectory, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XdogeConfig {
    pub steps: u64,
    pub batch_instances: usize,
    pub context_length: usize,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub warmup_ratio: f64,
    /// Learning rate at step 0 as a fraction of the peak.
    pub warmup_start_ratio: f64,
    /// Learning rate at the last step as a fraction of the peak.
    pub lr_floor_ratio: f64,
    pub weight_decay: f64,
    /// Regularization strength dividing the alignment scores.
    pub mu: f64,
    pub gamma: f64,
    pub thresholded: bool,
    /// Use one clip/redistribute pass instead of iterating to a fixed point.
    pub single_pass_projection: bool,
    /// Defaults to the largest token id in the corpus plus one.
    pub vocab_size: Option<usize>,
    pub seed: u64,
}

impl Default for XdogeConfig {
    fn default() -> Self {
        XdogeConfig {
            steps: 10_000,
            batch_instances: 128,
            context_length: 128,
            lr_peak: 5e-4,
            warmup_steps: 500,
            warmup_ratio: 0.05,
            warmup_start_ratio: 0.01,
            lr_floor_ratio: 0.1,
            weight_decay: 1e-2,
            mu: 1.0,
            gamma: 0.02,
            thresholded: true,
            single_pass_projection: false,
            vocab_size: None,
            seed: 0,
        }
    }
}

impl XdogeConfig {
    pub fn tokens_per_batch(&self) -> usize {
        self.batch_instances * self.context_length
    }

    pub fn projection_mode(&self) -> ProjectionMode {
        if self.single_pass_projection {
            ProjectionMode::SinglePass
        } else {
            ProjectionMode::FixedPoint
        }
    }

    /// Checks the hyperparameters against a corpus of `k` sources.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_instances == 0 {
            return bad("batch_instances must be positive".into());
        }
        if self.context_length < 2 {
            return bad("context_length must be at least 2".into());
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return bad(format!("lr_peak must be positive, got {}", self.lr_peak));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!(
                "warmup_ratio must lie in [0, 1], got {}",
                self.warmup_ratio
            ));
        }
        for (name, r) in [
            ("warmup_start_ratio", self.warmup_start_ratio),
            ("lr_floor_ratio", self.lr_floor_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {r}"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.thresholded && self.gamma * k as f64 > 1.0 + crate::simplex::SIMPLEX_TOL {
            return Err(Error::Infeasible(format!(
                "gamma {} times {k} sources exceeds 1",
                self.gamma
            )));
        }
        if self.vocab_size == Some(0) {
            return bad("vocab_size must be positive".into());
        }
        Ok(())
    }

    /// Short stable hash of every field.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> StepSchedule {
        let from_ratio = (self.warmup_ratio * self.steps as f64).round() as u64;
        StepSchedule {
            lr_peak: self.lr_peak,
            warmup_steps: self.warmup_steps.min(from_ratio),
            total_steps: self.steps,
            warmup_start_ratio: self.warmup_start_ratio,
            floor_ratio: self.lr_floor_ratio,
        }
    }
}

/// Linear warmup from `warmup_start_ratio * peak` to the peak, then cosine
/// decay to `floor_ratio * peak` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub warmup_start_ratio: f64,
    pub floor_ratio: f64,
}

impl StepSchedule {
    pub fn new(lr_peak: f64, warmup_steps: u64, total_steps: u64) -> Self {
        StepSchedule {
            lr_peak,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
            warmup_start_ratio: 0.01,
            floor_ratio: 0.1,
        }
    }
}

pub fn lr_at(schedule: &StepSchedule, step: u64) -> Result<f64> {
    let s = schedule;
    if step > s.total_steps {
        return Err(Error::Input(format!(
            "step {step} is past the schedule end {}",
            s.total_steps
        )));
    }
    if step < s.warmup_steps {
        let frac = step as f64 / s.warmup_steps as f64;
        return Ok(s.lr_peak * (s.warmup_start_ratio + (1.0 - s.warmup_start_ratio) * frac));
    }
    if s.total_steps == s.warmup_steps {
        return Ok(s.lr_peak);
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    let floor = s.floor_ratio * s.lr_peak;
    Ok(floor + (s.lr_peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: ProxyParams,
    pub alpha: WeightVector,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(params: ProxyParams, alpha: WeightVector, seed: u64) -> Self {
        TrainerState {
            params,
            alpha,
            step: 0,
            rng: ChaCha8Rng::from_seed(derive_seed(seed, "trainer")),
        }
    }

    const MAGIC: &'static [u8; 4] = b"XDGS";
    const VERSION: u32 = 1;

    /// Binary checkpoint including the exact RNG position.
    pub fn write_to<W: Write>(&self, mut w: W, fingerprint: &str) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        write_str(&mut w, fingerprint)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.rng.get_seed())?;
        w.write_all(&self.rng.get_stream().to_le_bytes())?;
        w.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        match self.alpha.floor() {
            Some(g) => {
                w.write_all(&[1])?;
                w.write_all(&g.to_le_bytes())?;
            }
            None => w.write_all(&[0])?,
        }
        w.write_all(&(self.alpha.len() as u32).to_le_bytes())?;
        for (key, a) in self.alpha.iter() {
            write_str(&mut w, &key.language)?;
            write_str(&mut w, &key.domain)?;
            w.write_all(&a.to_le_bytes())?;
        }
        self.params.write_to(w)
    }

    /// Reads a checkpoint, returning the state and the config fingerprint it
    /// was written with.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, String)> {
        let io = |e| Error::io("<trainer checkpoint>", e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::Input("not a trainer checkpoint".into()));
        }
        let version = read_u32(&mut r).map_err(io)?;
        if version != Self::VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let fingerprint = read_str(&mut r)?;
        let step = read_u64(&mut r).map_err(io)?;
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed).map_err(io)?;
        let stream = read_u64(&mut r).map_err(io)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos).map_err(io)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        let floor = if flag[0] == 1 {
            Some(f64::from_le_bytes(read_8(&mut r)?))
        } else {
            None
        };
        let k = read_u32(&mut r).map_err(io)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..k {
            let lang = read_str(&mut r)?;
            let domain = read_str(&mut r)?;
            let a = f64::from_le_bytes(read_8(&mut r)?);
            entries.insert(SourceKey::new(lang, domain)?, a);
        }
        let alpha = WeightVector::new(entries, floor)?;
        let params = ProxyParams::read_from(r)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from_le_bytes(pos));
        Ok((
            TrainerState {
                params,
                alpha,
                step,
                rng,
            },
            fingerprint,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, fingerprint: &str) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        self.write_to(&mut bytes, fingerprint)
            .expect("writing to a Vec cannot fail");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TrainerState::read_from(bytes.as_slice())
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_8<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::io("<trainer checkpoint>", e))?;
    Ok(b)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let io = |e| Error::io("<trainer checkpoint>", e);
    let len = read_u32(r).map_err(io)? as usize;
    if len > 1 << 16 {
        return Err(Error::Input("corrupt checkpoint string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io)?;
    String::from_utf8(buf).map_err(|_| Error::Input("checkpoint string is not UTF-8".into()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentScores {
    pub scores: BTreeMap<SourceKey, f64>,
}

fn draw_window<R: Rng + ?Sized>(rng: &mut R, source: &Source, context: usize) -> Vec<u32> {
    let docs = source.documents();
    let first = &docs[rng.random_range(0..docs.len())].token_ids;
    if first.len() >= context {
        let start = rng.random_range(0..=first.len() - context);
        return first[start..start + context].to_vec();
    }
    let mut buf = first.clone();
    while buf.len() < context {
        buf.extend_from_slice(&docs[rng.random_range(0..docs.len())].token_ids);
    }
    buf.truncate(context);
    buf
}

/// Draws one training batch. Every source key of `alpha` gets an entry; the
/// batch of an unsampled source is empty.
pub fn sample_batch(
    state: &mut TrainerState,
    corpus: &Corpus,
    config: &XdogeConfig,
) -> Result<BTreeMap<SourceKey, TokenBatch>> {
    let keys: Vec<&SourceKey> = state.alpha.keys().collect();
    let sources = keys
        .iter()
        .map(|k| {
            corpus
                .source(k)
                .ok_or_else(|| Error::Input(format!("corpus has no source {k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = state.alpha.values();
    let mut groups: Vec<Vec<Vec<u32>>> = vec![Vec::new(); keys.len()];
    for _ in 0..config.batch_instances {
        let i = categorical(&mut state.rng, &weights);
        let source = sources[i];
        if source.is_empty() || !source.is_tokenized() {
            return Err(Error::Sampling(format!(
                "source {} has no tokenized documents",
                source.key()
            )));
        }
        groups[i].push(draw_window(&mut state.rng, source, config.context_length));
    }
    keys.into_iter()
        .zip(groups)
        .map(|(k, seqs)| Ok((k.clone(), TokenBatch::new(k.clone(), seqs)?)))
        .collect()
}

/// `theta (1 - lr wd) - lr sum_i alpha_i g_i`; absent sources contribute zero.
pub fn inner_step(
    params: &ProxyParams,
    alpha: &WeightVector,
    per_source_grads: &BTreeMap<SourceKey, GradientVector>,
    lr: f64,
    weight_decay: f64,
) -> Result<ProxyParams> {
    let n = params.parameter_count();
    let mut direction = vec![0.0; n];
    for (key, g) in per_source_grads {
        if g.values.len() != n {
            return Err(Error::Numeric(format!(
                "gradient for {key} has {} entries, parameters have {n}",
                g.values.len()
            )));
        }
        let a = alpha
            .get(key)
            .ok_or_else(|| Error::Input(format!("no weight for source {key}")))?;
        for (d, x) in direction.iter_mut().zip(&g.values) {
            *d += a * x;
        }
    }
    let shrink = 1.0 - lr * weight_decay;
    let decayed = ProxyParams::from_logits(
        params.vocab_size(),
        params.logits().iter().map(|x| x * shrink).collect(),
    )?;
    apply_update(&decayed, &direction, lr)
}

/// `W_i = <g_i, sum_j g_j>`, self term included.
pub fn alignment_scores(
    per_source_grads: &BTreeMap<SourceKey, GradientVector>,
) -> Result<AlignmentScores> {
    let n = per_source_grads
        .values()
        .next()
        .ok_or_else(|| Error::Input("no gradients to align".into()))?
        .values
        .len();
    let mut total = vec![0.0; n];
    for (key, g) in per_source_grads {
        if g.values.len() != n {
            return Err(Error::Input(format!(
                "gradient for {key} has the wrong length"
            )));
        }
        for (t, x) in total.iter_mut().zip(&g.values) {
            *t += x;
        }
    }
    let scores = per_source_grads
        .iter()
        .map(|(k, g)| (k.clone(), g.dot(&total)))
        .collect();
    Ok(AlignmentScores { scores })
}

/// Exponentiated-gradient update of alpha followed by the floor projection
/// in thresholded mode. Computed in log space with the maximum subtracted,
/// which leaves the normalized result unchanged.
pub fn outer_step(
    alpha: &WeightVector,
    scores: &AlignmentScores,
    lr: f64,
    config: &XdogeConfig,
) -> Result<WeightVector> {
    if config.mu.is_nan() || config.mu <= 0.0 {
        return Err(Error::Config(format!(
            "mu must be positive, got {}",
            config.mu
        )));
    }
    let logs: Vec<(SourceKey, f64)> = alpha
        .iter()
        .map(|(k, a)| {
            let w = scores.scores.get(k).copied().unwrap_or(0.0);
            if !w.is_finite() {
                return Err(Error::Numeric(format!("alignment score for {k} is {w}")));
            }
            Ok((k.clone(), a.ln() + lr * w / config.mu))
        })
        .collect::<Result<_>>()?;
    let max = logs
        .iter()
        .map(|(_, l)| *l)
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("weight update overflowed".into()));
    }
    let raised = WeightVector::normalize(logs.into_iter().map(|(k, l)| (k, (l - max).exp())))?;
    if config.thresholded {
        Ok(project_floor_with(&raised, config.gamma, config.projection_mode())?.0)
    } else {
        Ok(raised)
    }
}

/// Drives the loop one step at a time; [`run`] wraps it.
pub struct Trainer<'a> {
    config: XdogeConfig,
    corpus: &'a Corpus,
    schedule: StepSchedule,
    state: TrainerState,
    provider: &'a dyn GradientProvider,
    fingerprint: String,
}

static BIGRAM: BigramModel = BigramModel;

impl<'a> Trainer<'a> {
    pub fn new(
        config: XdogeConfig,
        corpus: &'a Corpus,
        init: Option<WeightVector>,
    ) -> Result<Self> {
        config.validate(corpus.k())?;
        if corpus.k() == 0 {
            return Err(Error::Input("corpus has no sources".into()));
        }
        if !corpus.is_tokenized() {
            return Err(Error::Precondition(
                "corpus must be tokenized before training".into(),
            ));
        }
        let vocab = vocab_for(&config, corpus)?;
        let alpha = match init {
            Some(a) => {
                let mut keys: Vec<SourceKey> = corpus.keys();
                keys.sort();
                if !a.keys().eq(keys.iter()) {
                    return Err(Error::Input(
                        "initial weights do not match the corpus sources".into(),
                    ));
                }
                a
            }
            None => WeightVector::uniform(corpus.keys())?,
        };
        let alpha = if config.thresholded {
            project_floor_with(&alpha, config.gamma, config.projection_mode())?.0
        } else {
            alpha
        };
        let state = TrainerState::new(ProxyParams::zeros(vocab), alpha, config.seed);
        Ok(Trainer {
            fingerprint: config.fingerprint(),
            schedule: config.schedule(),
            config,
            corpus,
            state,
            provider: &BIGRAM,
        })
    }

    /// Continues from a checkpoint written under the same config.
    pub fn resume(
        config: XdogeConfig,
        corpus: &'a Corpus,
        state: TrainerState,
        checkpoint_fingerprint: &str,
    ) -> Result<Self> {
        let mut trainer = Trainer::new(config, corpus, None)?;
        if checkpoint_fingerprint != trainer.fingerprint {
            return Err(Error::Config(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        if state.params.vocab_size() != trainer.state.params.vocab_size()
            || !state.alpha.same_keys(&trainer.state.alpha)
        {
            return Err(Error::Config("checkpoint does not match the corpus".into()));
        }
        trainer.state = state;
        Ok(trainer)
    }

    pub fn with_provider(mut self, provider: &'a dyn GradientProvider) -> Self {
        self.provider = provider;
        self
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn config(&self) -> &XdogeConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.config.steps
    }

    /// The record describing the current state before any step is taken.
    pub fn initial_record(&self) -> Result<TrajectoryRecord> {
        Ok(TrajectoryRecord {
            step: self.state.step,
            lr: lr_at(&self.schedule, self.state.step)?,
            alpha: self.state.alpha.clone(),
            losses: BTreeMap::new(),
            scores: BTreeMap::new(),
        })
    }

    pub fn step(&mut self) -> Result<TrajectoryRecord> {
        let t = self.state.step;
        let lr = lr_at(&self.schedule, t)?;
        let batches = sample_batch(&mut self.state, self.corpus, &self.config)?;
        let params = &self.state.params;
        let provider = self.provider;
        let results: Vec<(SourceKey, GradientVector, LossStats)> = batches
            .par_iter()
            .filter(|(_, b)| !b.is_empty())
            .map(|(k, b)| {
                let (g, stats) = provider.loss_and_gradient(params, b)?;
                Ok((k.clone(), g, stats))
            })
            .collect::<Result<_>>()?;
        let mut grads = BTreeMap::new();
        let mut losses = BTreeMap::new();
        for (k, g, stats) in results {
            if !stats.mean_loss.is_finite() || g.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Training {
                    step: t,
                    message: format!("non-finite loss or gradient for {k}"),
                });
            }
            losses.insert(k.clone(), stats.mean_loss);
            grads.insert(k, g);
        }
        let new_params = inner_step(
            params,
            &self.state.alpha,
            &grads,
            lr,
            self.config.weight_decay,
        )
        .map_err(|e| Error::Training {
            step: t,
            message: e.to_string(),
        })?;
        let scores = alignment_scores(&grads)?;
        let alpha =
            outer_step(&self.state.alpha, &scores, lr, &self.config).map_err(|e| match e {
                Error::Numeric(m) => Error::Training {
                    step: t,
                    message: m,
                },
                other => other,
            })?;
        self.state.params = new_params;
        self.state.alpha = alpha.clone();
        self.state.step = t + 1;
        Ok(TrajectoryRecord {
            step: t + 1,
            lr,
            alpha,
            losses,
            scores: scores.scores,
        })
    }
}

fn vocab_for(config: &XdogeConfig, corpus: &Corpus) -> Result<usize> {
    let observed = corpus.max_token_id().map_or(1, |m| m as usize + 1);
    match config.vocab_size {
        Some(v) if v < observed => Err(Error::Config(format!(
            "vocab_size {v} is smaller than the corpus vocabulary {observed}"
        ))),
        Some(v) => Ok(v),
        None => Ok(observed),
    }
}

/// Runs `config.steps` steps from uniform (or `init`) weights. The returned
/// trajectory holds the initial record at step 0 and one record per step.
pub fn run(
    config: &XdogeConfig,
    corpus: &Corpus,
    init: Option<WeightVector>,
) -> Result<Trajectory> {
    let mut trainer = Trainer::new(config.clone(), corpus, init)?;
    let mut traj = Trajectory::new(trainer.fingerprint());
    traj.push(trainer.initial_record()?)?;
    while !trainer.is_done() {
        traj.push(trainer.step()?)?;
    }
    Ok(traj)
}
