//! Interpolated absolute-discounting n-gram models used as a fast stand-in
//! for transformer training runs.
//!
//! For a history `h` and token `w`, level `k` (context of `k-1` tokens) is
//!
//! ```text
//! p_k(w|h) = max(c(h,w) - d, 0) / c(h)  +  d * n1(h) / c(h) * p_{k-1}(w|h')
//! ```
//!
//! where `c(h) = sum_w c(h,w)`, `n1(h)` is the number of distinct retained
//! continuations and `h'` drops the oldest token. Unseen contexts pass the
//! lower-order estimate through unchanged. Level 0 is uniform over the
//! vocabulary plus one unknown symbol, so no token ever gets zero mass.
//!
//! The stored entry count after pruning is the model-size knob reported as
//! `N` in run records.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Corpus, CorpusError, MixtureSpec};
use crate::scaling::RunRecord;
use crate::stats::TokenLossRecord;
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_DISCOUNT: f64 = 0.75;

const MAGIC: &[u8; 8] = b"SLNGRAM\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("training stream has {len} tokens, shorter than order {order}")]
    StreamTooShort { len: usize, order: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("evaluation stream is empty")]
    EmptyEvalStream,
    #[error("budgets must be strictly increasing")]
    BudgetsNotIncreasing,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub order: usize,
    /// Entries of order >= 2 with a count below this are dropped.
    /// `u64::MAX` keeps unigrams only.
    pub prune_min_count: u64,
    pub discount: f64,
    /// Replace lower-order counts by continuation counts.
    pub kneser_ney: bool,
}

impl TrainConfig {
    pub fn new(order: usize, prune_min_count: u64) -> Self {
        Self { order, prune_min_count, discount: DEFAULT_DISCOUNT, kneser_ney: false }
    }
}

type Gram = Vec<TokenId>;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    config: TrainConfig,
    vocab: Vec<TokenId>,
    /// Retained raw counts; `grams[k-1]` holds k-grams.
    grams: Vec<HashMap<Gram, u64>>,
    /// Counts used by the estimator at each level (raw or continuation).
    level_counts: Vec<HashMap<Gram, u64>>,
    /// Per level: context -> (sum of counts, distinct continuations).
    contexts: Vec<HashMap<Gram, (u64, u64)>>,
    vocab_set: HashSet<TokenId>,
}

/// Train on a token stream.
pub fn train(stream: &[TokenId], order: usize, prune_min_count: u64) -> Result<NGramModel, SurrogateError> {
    train_with(stream, TrainConfig::new(order, prune_min_count))
}

pub fn train_with(stream: &[TokenId], config: TrainConfig) -> Result<NGramModel, SurrogateError> {
    if config.order == 0 {
        return Err(SurrogateError::InvalidConfig("order must be at least 1".into()));
    }
    if config.prune_min_count == 0 {
        return Err(SurrogateError::InvalidConfig("prune_min_count must be at least 1".into()));
    }
    if !(config.discount > 0.0 && config.discount < 1.0) {
        return Err(SurrogateError::InvalidConfig(format!("discount must be in (0,1), got {}", config.discount)));
    }
    if stream.len() < config.order {
        return Err(SurrogateError::StreamTooShort { len: stream.len(), order: config.order });
    }
    let mut grams: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); config.order];
    for k in 1..=config.order {
        let level = &mut grams[k - 1];
        for w in stream.windows(k) {
            *level.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    // Pruning keeps the retained set suffix- and prefix-closed because a
    // k-gram's count never exceeds that of its (k-1)-gram prefix or suffix.
    for level in grams.iter_mut().skip(1) {
        level.retain(|_, c| *c >= config.prune_min_count);
    }
    Ok(NGramModel::from_grams(config, grams))
}

impl NGramModel {
    fn from_grams(config: TrainConfig, grams: Vec<HashMap<Gram, u64>>) -> Self {
        let order = config.order;
        let mut vocab: Vec<TokenId> = grams[0].keys().map(|g| g[0]).collect();
        vocab.sort();
        let vocab_set = vocab.iter().copied().collect();

        let mut level_counts = grams.clone();
        if config.kneser_ney {
            for k in 1..order {
                let mut cont: HashMap<Gram, u64> = HashMap::new();
                for g in grams[k].keys() {
                    *cont.entry(g[1..].to_vec()).or_insert(0) += 1;
                }
                level_counts[k - 1] = cont;
            }
        }
        let contexts = level_counts
            .iter()
            .map(|level| {
                let mut ctx: HashMap<Gram, (u64, u64)> = HashMap::new();
                for (g, c) in level {
                    if *c == 0 {
                        continue;
                    }
                    let e = ctx.entry(g[..g.len() - 1].to_vec()).or_insert((0, 0));
                    e.0 += c;
                    e.1 += 1;
                }
                ctx
            })
            .collect();
        Self { config, vocab, grams, level_counts, contexts, vocab_set }
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn discount(&self) -> f64 {
        self.config.discount
    }

    pub fn config(&self) -> TrainConfig {
        self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[TokenId] {
        &self.vocab
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.vocab_set.contains(&token)
    }

    /// Number of stored n-gram entries across all orders.
    pub fn parameter_count(&self) -> u64 {
        self.grams.iter().map(|g| g.len() as u64).sum()
    }

    pub fn count(&self, gram: &[TokenId]) -> u64 {
        self.grams.get(gram.len().wrapping_sub(1)).and_then(|l| l.get(gram)).copied().unwrap_or(0)
    }

    /// Mass of the reserved unknown symbol at the bottom of the recursion.
    pub fn uniform_mass(&self) -> f64 {
        1.0 / (self.vocab.len() as f64 + 1.0)
    }

    /// `p(token | history)`. Only the last `order-1` history tokens matter.
    /// Tokens outside the vocabulary get the unknown symbol's probability.
    pub fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let ctx_len = history.len().min(self.config.order - 1);
        let mut key: Vec<TokenId> = Vec::with_capacity(ctx_len + 1);
        key.extend_from_slice(&history[history.len() - ctx_len..]);
        key.push(token);
        let d = self.config.discount;
        let mut p = self.uniform_mass();
        for k in 1..=ctx_len + 1 {
            let gram = &key[key.len() - k..];
            let ctx = &gram[..k - 1];
            if let Some(&(total, distinct)) = self.contexts[k - 1].get(ctx) {
                let c = self.level_counts[k - 1].get(gram).copied().unwrap_or(0) as f64;
                let total = total as f64;
                p = (c - d).max(0.0) / total + d * distinct as f64 / total * p;
            }
        }
        p
    }

    pub fn prob_unknown(&self, history: &[TokenId]) -> f64 {
        // TokenId(0) is the document separator; use a value no tokenizer emits
        // when the separator itself is part of the vocabulary.
        let probe = if self.contains(TokenId(0)) { TokenId(u64::MAX) } else { TokenId(0) };
        debug_assert!(!self.contains(probe));
        self.prob(history, probe)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SurrogateError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.order as u32).to_le_bytes())?;
        w.write_all(&self.config.discount.to_le_bytes())?;
        w.write_all(&[self.config.kneser_ney as u8])?;
        w.write_all(&self.config.prune_min_count.to_le_bytes())?;
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        w.write_all(&self.vocab_hash())?;
        w.write_all(&self.parameter_count().to_le_bytes())?;
        for level in &self.grams {
            let mut entries: Vec<(&Gram, &u64)> = level.iter().collect();
            entries.sort();
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (g, c) in entries {
                for t in g {
                    w.write_all(&t.to_le_bytes())?;
                }
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SurrogateError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SurrogateError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(SurrogateError::Format(format!("unsupported version {version}")));
        }
        let order = read_u32(&mut r)? as usize;
        let discount = f64::from_le_bytes(read_arr(&mut r)?);
        let [kn] = read_arr::<1>(&mut r)?;
        let prune_min_count = read_u64(&mut r)?;
        let vocab_size = read_u64(&mut r)?;
        let vocab_hash: [u8; 32] = read_arr(&mut r)?;
        let parameter_count = read_u64(&mut r)?;
        if order == 0 {
            return Err(SurrogateError::Format("order 0".into()));
        }
        let mut grams = Vec::with_capacity(order);
        for k in 1..=order {
            let n = read_u64(&mut r)?;
            let mut level = HashMap::with_capacity(n as usize);
            for _ in 0..n {
                let g: Gram = (0..k).map(|_| read_u64(&mut r).map(TokenId)).collect::<Result<_, _>>()?;
                level.insert(g, read_u64(&mut r)?);
            }
            grams.push(level);
        }
        let config = TrainConfig { order, prune_min_count, discount, kneser_ney: kn != 0 };
        let model = Self::from_grams(config, grams);
        if model.vocab.len() as u64 != vocab_size || model.vocab_hash() != vocab_hash {
            return Err(SurrogateError::Format("vocabulary hash mismatch".into()));
        }
        if model.parameter_count() != parameter_count {
            return Err(SurrogateError::Format("parameter count mismatch".into()));
        }
        Ok(model)
    }

    /// SHA-256 over the sorted vocabulary ids.
    pub fn vocab_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.vocab {
            h.update(t.to_le_bytes());
        }
        h.finalize().into()
    }
}

fn read_arr<const N: usize>(r: &mut impl Read) -> Result<[u8; N], SurrogateError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32, SurrogateError> {
    Ok(u32::from_le_bytes(read_arr(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, SurrogateError> {
    Ok(u64::from_le_bytes(read_arr(r)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cross_entropy_nats_per_token: f64,
    pub token_count: u64,
    pub per_token_losses: Option<Vec<TokenLossRecord>>,
}

impl EvalResult {
    pub fn perplexity(&self) -> f64 {
        self.cross_entropy_nats_per_token.exp()
    }
}

/// Mean negative log-probability (nats) of `eval_stream` under `model`.
pub fn evaluate(model: &NGramModel, eval_stream: &[TokenId], emit_per_token: bool) -> Result<EvalResult, SurrogateError> {
    evaluate_labeled(model, eval_stream, None, emit_per_token)
}

/// Like [`evaluate`], with optional token strings for the per-token log.
pub fn evaluate_labeled(
    model: &NGramModel,
    eval_stream: &[TokenId],
    pieces: Option<&[String]>,
    emit_per_token: bool,
) -> Result<EvalResult, SurrogateError> {
    if eval_stream.is_empty() {
        return Err(SurrogateError::EmptyEvalStream);
    }
    let ctx = model.order() - 1;
    let mut total = 0.0;
    let mut log = emit_per_token.then(|| Vec::with_capacity(eval_stream.len()));
    for (i, &tok) in eval_stream.iter().enumerate() {
        let hist = &eval_stream[i.saturating_sub(ctx)..i];
        let nll = -model.prob(hist, tok).ln();
        total += nll;
        if let Some(log) = log.as_mut() {
            let token = pieces.and_then(|p| p.get(i).cloned()).unwrap_or_else(|| tok.0.to_string());
            log.push(TokenLossRecord { position: i as u64, token, loss_nats: nll });
        }
    }
    Ok(EvalResult {
        cross_entropy_nats_per_token: total / eval_stream.len() as f64,
        token_count: eval_stream.len() as u64,
        per_token_losses: log,
    })
}

/// One capacity setting of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capacity {
    pub order: usize,
    pub prune_min_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMixture {
    pub id: String,
    /// Its `token_budget` is replaced by each curve budget.
    pub spec: MixtureSpec,
}

/// Train and evaluate one surrogate per (mixture, budget, capacity).
///
/// Records are ordered mixture-major, then budget, then capacity. Each
/// mixture keeps its seed across budgets, so larger budgets select a
/// superset of the documents chosen for smaller ones.
pub fn run_curve(
    mixtures: &[CurveMixture],
    budgets: &[u64],
    capacities: &[Capacity],
    corpora: &[&Corpus],
    tokenizer: &dyn Tokenizer,
    eval_stream: &[TokenId],
) -> Result<Vec<RunRecord>, SurrogateError> {
    if budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SurrogateError::BudgetsNotIncreasing);
    }
    if eval_stream.is_empty() {
        return Err(SurrogateError::EmptyEvalStream);
    }
    let jobs: Vec<(&CurveMixture, u64)> = mixtures.iter().flat_map(|m| budgets.iter().map(move |&b| (m, b))).collect();
    let results: Vec<Result<Vec<RunRecord>, SurrogateError>> = jobs
        .par_iter()
        .map(|(m, budget)| {
            let spec = MixtureSpec { token_budget: *budget, ..m.spec.clone() };
            let manifest = corpus::mix(&spec, corpora, tokenizer)?;
            let stream: Vec<TokenId> = corpus::token_stream(&manifest, corpora, tokenizer)?.with_separators().collect();
            capacities
                .iter()
                .map(|cap| {
                    let model = train(&stream, cap.order, cap.prune_min_count)?;
                    let eval = evaluate(&model, eval_stream, false)?;
                    Ok(RunRecord {
                        mixture_id: m.id.clone(),
                        n_params: model.parameter_count(),
                        d_tokens: *budget,
                        loss_nats: eval.cross_entropy_nats_per_token,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
