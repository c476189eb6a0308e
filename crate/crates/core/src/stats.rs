//! Unigram statistics: frequency tables, Zipf fits, smoothed KL divergence,
//! coverage gaps and rolling averages over per-token loss logs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Add-eps smoothing used when none is given.
pub const DEFAULT_KL_EPS: f64 = 0.5;
pub const DEFAULT_ZIPF_TOP_K: usize = 10_000;
pub const MIN_ZIPF_RANKS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("token stream is empty")]
    EmptyStream,
    #[error("zipf fit needs at least {needed} ranks, have {have}")]
    InsufficientRanks { needed: usize, have: usize },
    #[error("zipf fit needs at least 10 distinct counts, have {0}")]
    TooFewDistinctCounts(usize),
    #[error("degenerate input: zero variance in log-count")]
    Degenerate,
    #[error("smoothing eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("both unigram tables are empty")]
    BothEmpty,
    #[error("threshold must lie in (0,1), got {0}")]
    InvalidThreshold(f64),
    #[error("rolling window must be at least 1")]
    InvalidWindow,
    #[error("no loss records")]
    EmptyRecords,
    #[error("positions not strictly increasing at record {0}")]
    NonMonotone(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("loss log parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnigramTable {
    pub corpus_label: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub vocab_size: usize,
}

impl UnigramTable {
    pub fn empty(label: &str) -> Self {
        Self { corpus_label: label.to_string(), counts: BTreeMap::new(), total: 0, vocab_size: 0 }
    }

    pub fn from_counts<S: Into<String>>(label: &str, counts: impl IntoIterator<Item = (S, u64)>) -> Self {
        let mut t = Self::empty(label);
        for (k, c) in counts {
            t.add(k.into(), c);
        }
        t
    }

    fn add(&mut self, token: String, n: u64) {
        if n == 0 {
            return;
        }
        let slot = self.counts.entry(token).or_insert(0);
        if *slot == 0 {
            self.vocab_size += 1;
        }
        *slot += n;
        self.total += n;
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &UnigramTable) {
        for (k, c) in &other.counts {
            self.add(k.clone(), *c);
        }
    }

    pub fn relative_frequency(&self, token: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(token) as f64 / self.total as f64
        }
    }

    /// Tokens by descending count, ties broken by lexicographic token order.
    pub fn ranked(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.counts.iter().map(|(k, c)| (k.as_str(), *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

pub fn count_unigrams<I, S>(label: &str, stream: I) -> Result<UnigramTable, StatsError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut t = UnigramTable::empty(label);
    for tok in stream {
        let tok = tok.as_ref();
        if let Some(c) = t.counts.get_mut(tok) {
            *c += 1;
            t.total += 1;
        } else {
            t.add(tok.to_string(), 1);
        }
    }
    if t.total == 0 {
        return Err(StatsError::EmptyStream);
    }
    Ok(t)
}

/// Count shards in parallel and merge.
pub fn count_unigrams_sharded<S: AsRef<str> + Sync>(label: &str, shards: &[Vec<S>]) -> Result<UnigramTable, StatsError> {
    let merged = shards
        .par_iter()
        .map(|shard| {
            let mut t = UnigramTable::empty(label);
            for tok in shard {
                t.add(tok.as_ref().to_string(), 1);
            }
            t
        })
        .reduce(
            || UnigramTable::empty(label),
            |mut a, b| {
                a.merge(&b);
                a
            },
        );
    if merged.total == 0 {
        return Err(StatsError::EmptyStream);
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfFit {
    /// Positive exponent: count ~ exp(log_intercept) * rank^(-exponent_s).
    pub exponent_s: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub rank_range: (usize, usize),
}

impl ZipfFit {
    pub fn predict(&self, rank: usize) -> f64 {
        (self.log_intercept - self.exponent_s * (rank as f64).ln()).exp()
    }
}

/// OLS of ln(count) on ln(rank) over ranks `1..=top_k`.
pub fn fit_zipf(table: &UnigramTable, top_k: usize) -> Result<ZipfFit, StatsError> {
    if top_k < MIN_ZIPF_RANKS || table.vocab_size < top_k {
        return Err(StatsError::InsufficientRanks { needed: top_k.max(MIN_ZIPF_RANKS), have: table.vocab_size });
    }
    let counts: Vec<f64> = table.ranked().iter().take(top_k).map(|(_, c)| *c as f64).collect();
    fit_zipf_ranked(&counts)
}

/// Zipf fit with the default `top_k = min(10000, vocab_size)`.
pub fn fit_zipf_default(table: &UnigramTable) -> Result<ZipfFit, StatsError> {
    fit_zipf(table, DEFAULT_ZIPF_TOP_K.min(table.vocab_size))
}

/// Fit already-ranked positive counts (rank 1 first). Accepts real values.
pub fn fit_zipf_ranked(counts: &[f64]) -> Result<ZipfFit, StatsError> {
    if counts.len() < MIN_ZIPF_RANKS {
        return Err(StatsError::InsufficientRanks { needed: MIN_ZIPF_RANKS, have: counts.len() });
    }
    let distinct: BTreeSet<u64> = counts.iter().map(|c| c.to_bits()).collect();
    if distinct.len() == 1 {
        return Err(StatsError::Degenerate);
    }
    if distinct.len() < MIN_ZIPF_RANKS {
        return Err(StatsError::TooFewDistinctCounts(distinct.len()));
    }
    let n = counts.len() as f64;
    let xs: Vec<f64> = (1..=counts.len()).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if syy == 0.0 {
        return Err(StatsError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(ZipfFit {
        exponent_s: -slope,
        log_intercept: intercept,
        r_squared: (1.0 - sse / syy).clamp(0.0, 1.0),
        rank_range: (1, counts.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub test_label: String,
    pub train_label: String,
    pub kl_nats: f64,
    pub smoothing_eps: f64,
    pub union_vocab: usize,
    pub test_only_tokens: usize,
    pub train_only_tokens: usize,
}

/// Smoothed distribution over the union vocabulary.
struct Smoothed<'a> {
    table: &'a UnigramTable,
    eps: f64,
    denom: f64,
}

impl<'a> Smoothed<'a> {
    fn new(table: &'a UnigramTable, eps: f64, union: usize) -> Self {
        Self { table, eps, denom: table.total as f64 + eps * union as f64 }
    }

    fn p(&self, token: &str) -> f64 {
        (self.table.count(token) as f64 + self.eps) / self.denom
    }
}

fn union_vocab<'a>(a: &'a UnigramTable, b: &'a UnigramTable) -> BTreeSet<&'a str> {
    a.counts.keys().chain(b.counts.keys()).map(String::as_str).collect()
}

/// KL(test || train) in nats after add-eps smoothing over the union vocabulary.
pub fn kl_divergence(test: &UnigramTable, train: &UnigramTable, eps: f64) -> Result<DivergenceReport, StatsError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(StatsError::InvalidEps(eps));
    }
    if test.total == 0 && train.total == 0 {
        return Err(StatsError::BothEmpty);
    }
    let union = union_vocab(test, train);
    let p = Smoothed::new(test, eps, union.len());
    let q = Smoothed::new(train, eps, union.len());
    let mut kl = 0.0;
    for tok in &union {
        let (pt, qt) = (p.p(tok), q.p(tok));
        kl += pt * (pt / qt).ln();
    }
    Ok(DivergenceReport {
        test_label: test.corpus_label.clone(),
        train_label: train.corpus_label.clone(),
        kl_nats: kl.max(0.0),
        smoothing_eps: eps,
        union_vocab: union.len(),
        test_only_tokens: test.counts.keys().filter(|k| train.count(k) == 0).count(),
        train_only_tokens: train.counts.keys().filter(|k| test.count(k) == 0).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub token: String,
    pub test_frequency: f64,
    pub train_frequency: f64,
    pub ratio: f64,
}

pub fn coverage_gaps(
    test: &UnigramTable,
    train: &UnigramTable,
    min_test_freq: f64,
    max_train_freq: f64,
) -> Result<Vec<CoverageGap>, StatsError> {
    coverage_gaps_with_eps(test, train, min_test_freq, max_train_freq, DEFAULT_KL_EPS)
}

/// Tokens frequent in `test` but rare in `train`, by smoothed relative
/// frequency (same smoothing as [`kl_divergence`]). Sorted by ratio
/// descending, then token.
pub fn coverage_gaps_with_eps(
    test: &UnigramTable,
    train: &UnigramTable,
    min_test_freq: f64,
    max_train_freq: f64,
    eps: f64,
) -> Result<Vec<CoverageGap>, StatsError> {
    for t in [min_test_freq, max_train_freq] {
        if !(t > 0.0 && t < 1.0) {
            return Err(StatsError::InvalidThreshold(t));
        }
    }
    if !(eps > 0.0) {
        return Err(StatsError::InvalidEps(eps));
    }
    let union = union_vocab(test, train);
    let p = Smoothed::new(test, eps, union.len());
    let q = Smoothed::new(train, eps, union.len());
    let mut gaps: Vec<CoverageGap> = test
        .counts
        .keys()
        .filter_map(|tok| {
            let (pt, qt) = (p.p(tok), q.p(tok));
            (pt >= min_test_freq && qt <= max_train_freq).then(|| CoverageGap {
                token: tok.clone(),
                test_frequency: pt,
                train_frequency: qt,
                ratio: pt / qt,
            })
        })
        .collect();
    gaps.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.token.cmp(&b.token)));
    Ok(gaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLossRecord {
    pub position: u64,
    pub token: String,
    #[serde(rename = "loss")]
    pub loss_nats: f64,
}

/// Centered moving average; windows shrink at the boundaries so the output
/// has one entry per record. Even windows extend one further to the right.
pub fn rolling_loss(records: &[TokenLossRecord], window: usize) -> Result<Vec<(u64, f64)>, StatsError> {
    if window == 0 {
        return Err(StatsError::InvalidWindow);
    }
    if records.is_empty() {
        return Err(StatsError::EmptyRecords);
    }
    if let Some(i) = records.windows(2).position(|w| w[1].position <= w[0].position) {
        return Err(StatsError::NonMonotone(i + 1));
    }
    let left = (window - 1) / 2;
    let right = window / 2;
    let n = records.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            let slice = &records[lo..=hi];
            let sum: f64 = slice.iter().map(|r| r.loss_nats).sum();
            (records[i].position, sum / slice.len() as f64)
        })
        .collect())
}

/// Read a loss log: `.csv` (header `position,token,loss`) or jsonl otherwise.
pub fn read_loss_log(path: &Path) -> Result<Vec<TokenLossRecord>, StatsError> {
    if path.extension().is_some_and(|e| e == "csv") {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| StatsError::Parse(e.to_string()))?;
        rdr.deserialize().map(|r| r.map_err(|e| StatsError::Parse(e.to_string()))).collect()
    } else {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| StatsError::Parse(format!("line {}: {e}", i + 1))))
            .collect()
    }
}

pub fn write_loss_log_jsonl(path: &Path, records: &[TokenLossRecord]) -> Result<(), StatsError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| StatsError::Parse(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_loss_log_csv(path: &Path, records: &[TokenLossRecord]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| StatsError::Parse(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| StatsError::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
