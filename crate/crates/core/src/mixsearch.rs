//! Mixture-ratio grid search and generator ablation sweeps.
//!
//! Every (cell, ratio) point is evaluated at most once. With a checkpoint
//! path configured, each finished point is appended to a jsonl ledger as soon
//! as it completes, and a later run with the same ledger skips everything
//! already recorded.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, MixtureSpec};
use crate::surrogate;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("ratio grid is empty")]
    EmptyGrid,
    #[error("invalid ratio grid: {0}")]
    InvalidGrid(String),
    #[error("no corpus for generator label {0}")]
    MissingCorpus(String),
    #[error("checkpoint ledger {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
#[error("{0}")]
pub struct EvalError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioGrid {
    ratios: Vec<f64>,
}

impl RatioGrid {
    pub fn new(ratios: Vec<f64>) -> Result<Self, SearchError> {
        if ratios.is_empty() {
            return Err(SearchError::EmptyGrid);
        }
        if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(SearchError::InvalidGrid(format!("ratio {r} outside [0,1]")));
        }
        if ratios.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SearchError::InvalidGrid("ratios must be strictly increasing".into()));
        }
        Ok(Self { ratios })
    }

    /// Ten exponentially spaced synthetic fractions, 0% to 100%.
    pub fn fine_grained() -> Self {
        Self { ratios: vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.50, 1.0] }
    }

    /// Generator-ablation fractions, 0.5% to 20%. Seven values: the source
    /// study describes "eight" points but lists these seven.
    pub fn generator_ablation() -> Self {
        Self { ratios: vec![0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20] }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

/// Everything an evaluator needs for one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub spec: MixtureSpec,
    pub natural_label: String,
    pub synthetic_label: String,
    pub ratio: f64,
    pub n_capacity: u64,
    pub d_budget: u64,
}

/// Maps a mixture and a (capacity, budget) cell to a validation loss.
/// Implementations must be deterministic.
pub trait Evaluator: Sync {
    fn evaluate(&self, point: &EvalPoint) -> Result<f64, EvalError>;

    /// Whether the evaluator can produce data for `label`.
    fn knows_label(&self, _label: &str) -> bool {
        true
    }
}

impl<F> Evaluator for F
where
    F: Fn(&EvalPoint) -> Result<f64, EvalError> + Sync,
{
    fn evaluate(&self, point: &EvalPoint) -> Result<f64, EvalError> {
        self(point)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub synthetic_label: String,
    pub n_capacity: u64,
    pub d_budget: u64,
}

impl CellSpec {
    pub fn new(label: &str, n_capacity: u64, d_budget: u64) -> Self {
        Self { synthetic_label: label.to_string(), n_capacity, d_budget }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioLoss {
    pub ratio: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFailure {
    pub ratio: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub synthetic_label: String,
    pub n_capacity: u64,
    pub d_budget: u64,
    /// In grid order.
    pub losses: Vec<RatioLoss>,
    pub failures: Vec<RatioFailure>,
    /// Lowest loss; exact ties go to the smaller synthetic fraction.
    pub best_ratio: Option<f64>,
    pub seed: u64,
    /// Some grid points failed or were not reached.
    pub partial: bool,
}

impl SearchCell {
    pub fn loss_at(&self, ratio: f64) -> Option<f64> {
        self.losses.iter().find(|l| l.ratio == ratio).map(|l| l.loss)
    }
}

/// Argmin with ties toward the lower ratio. `points` must be in ascending ratio order.
pub fn best_ratio(points: &[RatioLoss]) -> Option<f64> {
    let mut best: Option<&RatioLoss> = None;
    for p in points {
        if best.is_none_or(|b| p.loss < b.loss) {
            best = Some(p);
        }
    }
    best.map(|b| b.ratio)
}

#[derive(Debug, Clone, Default)]
pub struct SearchConfig {
    pub natural_label: String,
    pub seed: u64,
    /// Concurrent evaluations; 0 is treated as 1.
    pub parallelism: usize,
    pub checkpoint: Option<PathBuf>,
    /// When set, no new points are dispatched; in-flight ones still finish
    /// and are checkpointed.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl SearchConfig {
    pub fn new(natural_label: &str, seed: u64) -> Self {
        Self { natural_label: natural_label.to_string(), seed, parallelism: 1, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub synthetic_label: String,
    pub n: u64,
    pub d: u64,
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type PointKey = (String, u64, u64, u64);

fn key(label: &str, n: u64, d: u64, ratio: f64) -> PointKey {
    (label.to_string(), n, d, ratio.to_bits())
}

/// Load a ledger, dropping a torn trailing line left by a crash.
pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, SearchError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut text = fs::read_to_string(path)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        fs::write(path, &text)?;
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| SearchError::Checkpoint { path: path.to_path_buf(), message: e.to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<SearchCell>,
    /// Points evaluated in this run.
    pub evaluated: usize,
    /// Points taken from the checkpoint ledger.
    pub reused: usize,
    pub interrupted: bool,
}

/// Evaluate every ratio of `grid` for every cell.
pub fn run_grid(grid: &RatioGrid, cells: &[CellSpec], evaluator: &dyn Evaluator, config: &SearchConfig) -> Result<SweepOutcome, SearchError> {
    if grid.is_empty() {
        return Err(SearchError::EmptyGrid);
    }
    let mut done: HashMap<PointKey, Result<f64, String>> = HashMap::new();
    if let Some(path) = &config.checkpoint {
        for e in load_checkpoint(path)? {
            let r = match (e.loss, e.error) {
                (Some(l), _) => Ok(l),
                (None, Some(err)) => Err(err),
                (None, None) => continue,
            };
            done.insert(key(&e.synthetic_label, e.n, e.d, e.ratio), r);
        }
    }

    let mut pending = Vec::new();
    let mut reused = 0;
    for cell in cells {
        for &ratio in grid.ratios() {
            if done.contains_key(&key(&cell.synthetic_label, cell.n_capacity, cell.d_budget, ratio)) {
                reused += 1;
            } else {
                pending.push((cell, ratio));
            }
        }
    }

    let ledger = match &config.checkpoint {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?))
        }
        None => None,
    };
    let results: Mutex<HashMap<PointKey, Result<f64, String>>> = Mutex::new(HashMap::new());
    let next = AtomicUsize::new(0);
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    let cancelled = || config.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));

    let worker = || loop {
        if cancelled() || io_error.lock().unwrap().is_some() {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(cell, ratio)) = pending.get(i) else { return };
        let point = EvalPoint {
            spec: MixtureSpec::binary(&config.natural_label, &cell.synthetic_label, ratio, config.seed, cell.d_budget),
            natural_label: config.natural_label.clone(),
            synthetic_label: cell.synthetic_label.clone(),
            ratio,
            n_capacity: cell.n_capacity,
            d_budget: cell.d_budget,
        };
        let outcome = evaluator.evaluate(&point).map_err(|e| e.0).and_then(|l| {
            if l.is_finite() {
                Ok(l)
            } else {
                Err(format!("non-finite loss {l}"))
            }
        });
        if let Some(ledger) = &ledger {
            let entry = CheckpointEntry {
                synthetic_label: cell.synthetic_label.clone(),
                n: cell.n_capacity,
                d: cell.d_budget,
                ratio,
                loss: outcome.as_ref().ok().copied(),
                error: outcome.as_ref().err().cloned(),
            };
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            let mut f = ledger.lock().unwrap();
            if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                *io_error.lock().unwrap() = Some(e);
            }
        }
        results.lock().unwrap().insert(key(&cell.synthetic_label, cell.n_capacity, cell.d_budget, ratio), outcome);
    };
    std::thread::scope(|s| {
        for _ in 0..config.parallelism.max(1) {
            s.spawn(worker);
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e.into());
    }
    let fresh = results.into_inner().unwrap();
    let evaluated = fresh.len();
    done.extend(fresh);

    let mut interrupted = false;
    let out_cells = cells
        .iter()
        .map(|cell| {
            let mut losses = Vec::new();
            let mut failures = Vec::new();
            for &ratio in grid.ratios() {
                match done.get(&key(&cell.synthetic_label, cell.n_capacity, cell.d_budget, ratio)) {
                    Some(Ok(l)) => losses.push(RatioLoss { ratio, loss: *l }),
                    Some(Err(e)) => failures.push(RatioFailure { ratio, reason: e.clone() }),
                    None => {
                        interrupted = true;
                        failures.push(RatioFailure { ratio, reason: "not evaluated (sweep interrupted)".into() })
                    }
                }
            }
            SearchCell {
                synthetic_label: cell.synthetic_label.clone(),
                n_capacity: cell.n_capacity,
                d_budget: cell.d_budget,
                best_ratio: best_ratio(&losses),
                partial: !failures.is_empty(),
                losses,
                failures,
                seed: config.seed,
            }
        })
        .collect();
    Ok(SweepOutcome { cells: out_cells, evaluated, reused, interrupted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub generator: String,
    pub ratio: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub n_capacity: u64,
    pub d_budget: u64,
    pub ratios: Vec<f64>,
    /// Generator-major, grid order within each generator.
    pub rows: Vec<AblationRow>,
    pub cells: Vec<SearchCell>,
}

impl AblationTable {
    pub fn loss(&self, generator: &str, ratio: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.generator == generator && r.ratio == ratio).and_then(|r| r.loss)
    }
}

/// Cross every generator's corpus with every ratio at one (capacity, budget).
pub fn ablation_sweep(
    generator_labels: &[&str],
    grid: &RatioGrid,
    evaluator: &dyn Evaluator,
    n_capacity: u64,
    d_budget: u64,
    config: &SearchConfig,
) -> Result<AblationTable, SearchError> {
    if let Some(missing) = generator_labels.iter().find(|l| !evaluator.knows_label(l)) {
        return Err(SearchError::MissingCorpus(missing.to_string()));
    }
    let cells: Vec<CellSpec> = generator_labels.iter().map(|g| CellSpec::new(g, n_capacity, d_budget)).collect();
    let outcome = run_grid(grid, &cells, evaluator, config)?;
    let rows = outcome
        .cells
        .iter()
        .flat_map(|c| {
            grid.ratios().iter().map(move |&r| AblationRow { generator: c.synthetic_label.clone(), ratio: r, loss: c.loss_at(r) })
        })
        .collect();
    Ok(AblationTable { n_capacity, d_budget, ratios: grid.ratios().to_vec(), rows, cells: outcome.cells })
}

/// One row of the combined sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub synthetic_label: String,
    pub n: u64,
    pub d: u64,
    pub ratio: f64,
    pub loss: f64,
}

pub fn sweep_rows(cells: &[SearchCell]) -> Vec<SweepRow> {
    cells
        .iter()
        .flat_map(|c| {
            c.losses.iter().map(move |l| SweepRow {
                synthetic_label: c.synthetic_label.clone(),
                n: c.n_capacity,
                d: c.d_budget,
                ratio: l.ratio,
                loss: l.loss,
            })
        })
        .collect()
}

/// Regroup CSV rows into cells (ratios sorted ascending) and recompute argmins.
pub fn cells_from_rows(rows: &[SweepRow], seed: u64) -> Vec<SearchCell> {
    let mut order: Vec<(String, u64, u64)> = Vec::new();
    let mut groups: HashMap<(String, u64, u64), Vec<RatioLoss>> = HashMap::new();
    for r in rows {
        let k = (r.synthetic_label.clone(), r.n, r.d);
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(RatioLoss { ratio: r.ratio, loss: r.loss });
    }
    order
        .into_iter()
        .map(|k| {
            let mut losses = groups.remove(&k).unwrap();
            losses.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
            SearchCell {
                synthetic_label: k.0,
                n_capacity: k.1,
                d_budget: k.2,
                best_ratio: best_ratio(&losses),
                losses,
                failures: Vec::new(),
                seed,
                partial: false,
            }
        })
        .collect()
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, SearchError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// Surrogate-backed evaluator: `n_capacity` is the n-gram order.
pub struct SurrogateEvaluator<'a> {
    pub corpora: Vec<&'a Corpus>,
    pub tokenizer: &'a dyn Tokenizer,
    pub eval_stream: Vec<TokenId>,
    pub prune_min_count: u64,
}

impl Evaluator for SurrogateEvaluator<'_> {
    fn evaluate(&self, point: &EvalPoint) -> Result<f64, EvalError> {
        let err = |e: &dyn std::fmt::Display| EvalError(e.to_string());
        let manifest = corpus::mix(&point.spec, &self.corpora, self.tokenizer).map_err(|e| err(&e))?;
        let stream: Vec<TokenId> = corpus::token_stream(&manifest, &self.corpora, self.tokenizer)
            .map_err(|e| err(&e))?
            .with_separators()
            .collect();
        let model = surrogate::train(&stream, point.n_capacity as usize, self.prune_min_count).map_err(|e| err(&e))?;
        let r = surrogate::evaluate(&model, &self.eval_stream, false).map_err(|e| err(&e))?;
        Ok(r.cross_entropy_nats_per_token)
    }

    fn knows_label(&self, label: &str) -> bool {
        self.corpora.iter().any(|c| c.label() == label)
    }
}

/// Runs an external command per point and parses the loss from the last
/// non-empty stdout line.
///
/// Arguments may contain `{label}`, `{natural}`, `{ratio}`, `{n}`, `{d}`,
/// `{seed}` and `{spec}` (mixture spec as JSON). The same values are exported
/// as `SYNTHLAB_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEvaluator {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl Evaluator for CommandEvaluator {
    fn evaluate(&self, p: &EvalPoint) -> Result<f64, EvalError> {
        let spec_json = serde_json::to_string(&p.spec).expect("spec serializes");
        let vars = [
            ("label", p.synthetic_label.clone()),
            ("natural", p.natural_label.clone()),
            ("ratio", p.ratio.to_string()),
            ("n", p.n_capacity.to_string()),
            ("d", p.d_budget.to_string()),
            ("seed", p.spec.seed.to_string()),
            ("spec", spec_json),
        ];
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| vars.iter().fold(a.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v)))
            .collect();
        let mut cmd = Command::new(&self.program);
        cmd.args(&args);
        for (k, v) in &vars {
            cmd.env(format!("SYNTHLAB_{}", k.to_uppercase()), v);
        }
        let out = cmd.output().map_err(|e| EvalError(format!("spawn {}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(EvalError(format!("{} exited with {}", self.program, out.status)));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let line = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
        line.parse::<f64>().map_err(|_| EvalError(format!("could not parse loss from {line:?}")))
    }
}

/// Looks losses up in a precomputed sweep CSV.
#[derive(Debug, Clone, Default)]
pub struct ReplayEvaluator {
    rows: Vec<SweepRow>,
}

impl ReplayEvaluator {
    pub fn new(rows: Vec<SweepRow>) -> Self {
        Self { rows }
    }

    pub fn from_csv(path: &Path) -> Result<Self, SearchError> {
        Ok(Self::new(read_sweep_csv(path)?))
    }
}

impl Evaluator for ReplayEvaluator {
    fn evaluate(&self, p: &EvalPoint) -> Result<f64, EvalError> {
        self.rows
            .iter()
            .find(|r| r.synthetic_label == p.synthetic_label && r.n == p.n_capacity && r.d == p.d_budget && (r.ratio - p.ratio).abs() <= 1e-12)
            .map(|r| r.loss)
            .ok_or_else(|| EvalError(format!("no replay row for {} n={} d={} ratio={}", p.synthetic_label, p.n_capacity, p.d_budget, p.ratio)))
    }

    fn knows_label(&self, label: &str) -> bool {
        self.rows.iter().any(|r| r.synthetic_label == label)
    }
}
