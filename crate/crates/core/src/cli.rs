//! Command-line pipeline driver.
//!
//! Every subcommand prints a JSON summary on success. Failures print
//! `{"error": {...}}` to stderr and exit nonzero.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Corpus, CorpusFormat, MixtureComponent, MixtureSpec};
use crate::mixsearch::{self, CellSpec, CommandEvaluator, Evaluator, RatioGrid, ReplayEvaluator, SearchConfig, SurrogateEvaluator};
use crate::report::{self, ReportData, ReportKind, Stamp};
use crate::scaling::{self, RecordFilter, RunRecord, ScalingForm};
use crate::stats;
use crate::surrogate::{self, Capacity, CurveMixture};
use crate::synthgen::{self, Audience, FilterPolicy, FilterSet, GenerationConfig, GenerationTask, PromptKind};
use crate::tokenizer::{self, TokenId, Tokenizer, WordPunctTokenizer};

#[derive(Debug, Parser)]
#[command(name = "synthlab", version, about = "Synthetic-data pre-training laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Validate the config and exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest declared corpora (or a single path) and report their handles.
    Ingest(IngestArgs),
    /// Build mixtures and write their manifests.
    Mix(MixArgs),
    /// Unigram statistics: Zipf fits, KL divergence, coverage gaps, loss curves.
    Stats,
    /// Generate synthetic corpora against a chat-completion endpoint.
    Generate,
    /// Train n-gram surrogates over a (mixture, budget, capacity) grid.
    Train,
    /// Fit scaling laws to run records.
    Fit(FitArgs),
    /// Mixture-ratio grid search.
    Search,
    /// Regenerate a figure from its CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    pub format: String,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct MixArgs {
    /// Only this mixture id.
    #[arg(long)]
    pub mixture: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub form: Option<ScalingForm>,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub mixture: Option<String>,
    #[arg(long)]
    pub fit_min_d: Option<f64>,
    #[arg(long)]
    pub fit_max_d: Option<f64>,
    #[arg(long)]
    pub fit_min_n: Option<f64>,
    #[arg(long)]
    pub fit_max_n: Option<f64>,
    #[arg(long)]
    pub holdout_min_d: Option<f64>,
    #[arg(long)]
    pub holdout_max_d: Option<f64>,
    #[arg(long)]
    pub holdout_min_n: Option<f64>,
    #[arg(long)]
    pub holdout_max_n: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long = "in")]
    pub input: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_tokenizer() -> String {
    WordPunctTokenizer::ID.to_string()
}

fn default_jsonl() -> CorpusFormat {
    CorpusFormat::Jsonl
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub corpora: Vec<CorpusDecl>,
    #[serde(default)]
    pub mixtures: Vec<MixtureDecl>,
    #[serde(default)]
    pub surrogate: Option<SurrogateSettings>,
    #[serde(default)]
    pub fit: Option<FitSettings>,
    #[serde(default)]
    pub sweep: Option<SweepSettings>,
    #[serde(default)]
    pub generation: Option<GenerationSettings>,
    #[serde(default)]
    pub stats: Option<StatsSettings>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output_dir(),
            tokenizer: default_tokenizer(),
            seed: 0,
            corpora: Vec::new(),
            mixtures: Vec::new(),
            surrogate: None,
            fit: None,
            sweep: None,
            generation: None,
            stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusDecl {
    pub label: String,
    pub path: PathBuf,
    #[serde(default = "default_jsonl")]
    pub format: CorpusFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDecl {
    pub id: String,
    /// Defaults to the pipeline seed.
    #[serde(default)]
    pub seed: Option<u64>,
    pub token_budget: u64,
    pub components: Vec<MixtureComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSettings {
    /// Mixture ids; empty means all.
    #[serde(default)]
    pub mixtures: Vec<String>,
    pub orders: Vec<usize>,
    #[serde(default = "default_prunes")]
    pub prune_min_counts: Vec<u64>,
    pub budgets: Vec<u64>,
    pub eval_corpus: String,
    #[serde(default)]
    pub eval_max_tokens: Option<usize>,
}

fn default_prunes() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    #[serde(default)]
    pub form: Option<ScalingForm>,
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default)]
    pub mixture: Option<String>,
    #[serde(default)]
    pub fit_min_d: Option<f64>,
    #[serde(default)]
    pub fit_max_d: Option<f64>,
    #[serde(default)]
    pub fit_min_n: Option<f64>,
    #[serde(default)]
    pub fit_max_n: Option<f64>,
    #[serde(default)]
    pub holdout_min_d: Option<f64>,
    #[serde(default)]
    pub holdout_max_d: Option<f64>,
    #[serde(default)]
    pub holdout_min_n: Option<f64>,
    #[serde(default)]
    pub holdout_max_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorDecl {
    Surrogate {
        eval_corpus: String,
        #[serde(default = "one")]
        prune_min_count: u64,
        #[serde(default)]
        eval_max_tokens: Option<usize>,
    },
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Replay {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Grid,
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    #[serde(default)]
    pub mode: SweepMode,
    pub natural: String,
    pub synthetic: Vec<String>,
    /// Defaults to the fine-grained grid (or the ablation grid in ablation mode).
    #[serde(default)]
    pub ratios: Option<Vec<f64>>,
    pub capacities: Vec<u64>,
    pub budgets: Vec<u64>,
    pub evaluator: EvaluatorDecl,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    pub source_corpus: String,
    /// Any of HQ, QA, TXBK.
    pub kinds: Vec<String>,
    /// Audiences for TXBK, assigned to source documents round-robin.
    #[serde(default = "all_audiences")]
    pub audiences: Vec<Audience>,
    #[serde(default)]
    pub max_docs: Option<usize>,
    #[serde(default)]
    pub ledger: Option<PathBuf>,
    #[serde(default)]
    pub min_tokens: Option<usize>,
    #[serde(default)]
    pub endpoint: GenerationConfig,
}

fn all_audiences() -> Vec<Audience> {
    Audience::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSettings {
    /// Corpora for Zipf fits; empty means all declared corpora.
    #[serde(default)]
    pub corpora: Vec<String>,
    /// (test, train) label pairs for KL divergence and coverage gaps.
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
    #[serde(default = "default_eps")]
    pub kl_eps: f64,
    #[serde(default = "default_top_k")]
    pub zipf_top_k: usize,
    #[serde(default = "default_gap_test")]
    pub gap_min_test_freq: f64,
    #[serde(default = "default_gap_train")]
    pub gap_max_train_freq: f64,
    #[serde(default)]
    pub loss_logs: Vec<PathBuf>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_eps() -> f64 {
    stats::DEFAULT_KL_EPS
}
fn default_top_k() -> usize {
    stats::DEFAULT_ZIPF_TOP_K
}
fn default_gap_test() -> f64 {
    1e-4
}
fn default_gap_train() -> f64 {
    1e-5
}
fn default_window() -> usize {
    100
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            corpora: Vec::new(),
            pairs: Vec::new(),
            kl_eps: default_eps(),
            zipf_top_k: default_top_k(),
            gap_min_test_freq: default_gap_test(),
            gap_max_train_freq: default_gap_train(),
            loss_logs: Vec::new(),
            window: default_window(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Make relative paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for c in &mut self.corpora {
            fix(&mut c.path);
        }
        if let Some(f) = &mut self.fit {
            if let Some(r) = &mut f.records {
                fix(r);
            }
        }
        if let Some(s) = &mut self.sweep {
            if let Some(c) = &mut s.checkpoint {
                fix(c);
            }
            if let EvaluatorDecl::Replay { path } = &mut s.evaluator {
                fix(path);
            }
        }
        if let Some(g) = &mut self.generation {
            if let Some(l) = &mut g.ledger {
                fix(l);
            }
        }
        if let Some(s) = &mut self.stats {
            s.loss_logs.iter_mut().for_each(fix);
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn has_corpus(&self, label: &str) -> bool {
        self.corpora.iter().any(|c| c.label == label)
    }

    fn mixture_spec(&self, m: &MixtureDecl) -> MixtureSpec {
        MixtureSpec { components: m.components.clone(), seed: m.seed.unwrap_or(self.seed), token_budget: m.token_budget }
    }

    /// Every problem with the config, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if tokenizer::tokenizer_by_id(&self.tokenizer).is_none() {
            v.push(format!("unknown tokenizer {}", self.tokenizer));
        }
        let mut seen = HashSet::new();
        for c in &self.corpora {
            if !seen.insert(&c.label) {
                v.push(format!("duplicate corpus label {}", c.label));
            }
            if !c.path.exists() {
                v.push(format!("corpus {}: path {} does not exist", c.label, c.path.display()));
            }
        }
        let label_check = |v: &mut Vec<String>, what: &str, label: &str| {
            if !self.has_corpus(label) {
                v.push(format!("{what}: unknown corpus label {label}"));
            }
        };
        let mut ids = HashSet::new();
        for m in &self.mixtures {
            if !ids.insert(&m.id) {
                v.push(format!("duplicate mixture id {}", m.id));
            }
            for c in &m.components {
                label_check(&mut v, &format!("mixture {}", m.id), &c.label);
            }
            v.extend(self.mixture_spec(m).violations().into_iter().map(|e| format!("mixture {}: {e}", m.id)));
        }
        if let Some(s) = &self.surrogate {
            for id in &s.mixtures {
                if !self.mixtures.iter().any(|m| &m.id == id) {
                    v.push(format!("surrogate: unknown mixture {id}"));
                }
            }
            label_check(&mut v, "surrogate.eval_corpus", &s.eval_corpus);
            if s.orders.is_empty() || s.orders.contains(&0) {
                v.push("surrogate.orders must be non-empty and >= 1".into());
            }
            if s.prune_min_counts.is_empty() || s.prune_min_counts.contains(&0) {
                v.push("surrogate.prune_min_counts must be non-empty and >= 1".into());
            }
            if s.budgets.is_empty() || s.budgets.windows(2).any(|w| w[1] <= w[0]) {
                v.push("surrogate.budgets must be non-empty and strictly increasing".into());
            }
        }
        if let Some(f) = &self.fit {
            v.extend(fit_violations(f));
        }
        if let Some(s) = &self.sweep {
            if let EvaluatorDecl::Surrogate { eval_corpus, .. } = &s.evaluator {
                label_check(&mut v, "sweep.natural", &s.natural);
                for l in &s.synthetic {
                    label_check(&mut v, "sweep.synthetic", l);
                }
                label_check(&mut v, "sweep.evaluator.eval_corpus", eval_corpus);
            }
            if let EvaluatorDecl::Replay { path } = &s.evaluator {
                if !path.exists() {
                    v.push(format!("sweep.evaluator: replay file {} does not exist", path.display()));
                }
            }
            if s.synthetic.is_empty() {
                v.push("sweep.synthetic must list at least one label".into());
            }
            if s.capacities.is_empty() || s.budgets.is_empty() {
                v.push("sweep.capacities and sweep.budgets must be non-empty".into());
            }
            if let Some(r) = &s.ratios {
                if let Err(e) = RatioGrid::new(r.clone()) {
                    v.push(format!("sweep.ratios: {e}"));
                }
            }
        }
        if let Some(g) = &self.generation {
            label_check(&mut v, "generation.source_corpus", &g.source_corpus);
            for k in &g.kinds {
                if !matches!(k.to_ascii_uppercase().as_str(), "HQ" | "QA" | "TXBK") {
                    v.push(format!("generation.kinds: unknown kind {k}"));
                }
            }
            if g.kinds.iter().any(|k| k.eq_ignore_ascii_case("TXBK")) && g.audiences.is_empty() {
                v.push("generation.audiences must be non-empty for TXBK".into());
            }
            v.extend(g.endpoint.violations().into_iter().map(|e| format!("generation.endpoint: {e}")));
            if let Some(min) = g.min_tokens {
                if min == 0 {
                    v.push("generation.min_tokens must be > 0".into());
                }
            }
        }
        if let Some(s) = &self.stats {
            for l in &s.corpora {
                label_check(&mut v, "stats.corpora", l);
            }
            for (a, b) in &s.pairs {
                label_check(&mut v, "stats.pairs", a);
                label_check(&mut v, "stats.pairs", b);
            }
            if !(s.kl_eps > 0.0) {
                v.push("stats.kl_eps must be > 0".into());
            }
            if s.window == 0 {
                v.push("stats.window must be >= 1".into());
            }
        }
        if let Some(problem) = writable_problem(&self.output_dir) {
            v.push(problem);
        }
        v
    }
}

fn fit_violations(f: &FitSettings) -> Vec<String> {
    let mut v = Vec::new();
    let pairs = [
        ("fit_min_d", f.fit_min_d, "fit_max_d", f.fit_max_d),
        ("fit_min_n", f.fit_min_n, "fit_max_n", f.fit_max_n),
        ("holdout_min_d", f.holdout_min_d, "holdout_max_d", f.holdout_max_d),
        ("holdout_min_n", f.holdout_min_n, "holdout_max_n", f.holdout_max_n),
    ];
    for (a, lo, b, hi) in pairs {
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if lo > hi {
                v.push(format!("fit.{a} {lo} exceeds fit.{b} {hi}"));
            }
        }
    }
    if let Some(r) = &f.records {
        if !r.exists() {
            v.push(format!("fit.records {} does not exist", r.display()));
        }
    }
    v
}

fn writable_problem(dir: &Path) -> Option<String> {
    let mut p = Some(dir);
    while let Some(cur) = p {
        if cur.as_os_str().is_empty() {
            return None;
        }
        if let Ok(meta) = fs::metadata(cur) {
            if !meta.is_dir() {
                return Some(format!("output_dir: {} is not a directory", cur.display()));
            }
            if meta.permissions().readonly() {
                return Some(format!("output_dir: {} is not writable", cur.display()));
            }
            return None;
        }
        p = cur.parent();
    }
    None
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Surrogate(#[from] surrogate::SurrogateError),
    #[error(transparent)]
    Scaling(#[from] scaling::ScalingError),
    #[error(transparent)]
    Search(#[from] mixsearch::SearchError),
    #[error(transparent)]
    Synth(#[from] synthgen::SynthError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Corpus(_) => "corpus",
            CliError::Stats(_) => "stats",
            CliError::Surrogate(_) => "surrogate",
            CliError::Scaling(_) => "scaling",
            CliError::Search(_) => "search",
            CliError::Synth(_) => "synthgen",
            CliError::Report(_) => "report",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Config(v) = self {
            err["violations"] = json!(v);
        }
        json!({ "error": err })
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// JSON object with the stamp fields merged in.
fn stamped(value: Value, stamp: &Stamp) -> Value {
    let mut v = value;
    if let Value::Object(m) = &mut v {
        m.insert("config_digest".into(), json!(stamp.config_digest));
        m.insert("tool_version".into(), json!(stamp.tool_version));
    }
    v
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    write(path, serde_json::to_string_pretty(value).expect("json serializes") + "\n")
}

/// Replace characters that are awkward in file names.
fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

struct Ctx {
    cfg: PipelineConfig,
    stamp: Stamp,
    tokenizer: Box<dyn Tokenizer>,
    parallelism: usize,
}

impl Ctx {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.output_dir.join(rel)
    }

    fn load_corpora(&self, labels: &[&str]) -> Result<Vec<Corpus>, CliError> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for label in labels {
            if !seen.insert(*label) {
                continue;
            }
            let decl = self.cfg.corpora.iter().find(|c| c.label == *label).ok_or_else(|| corpus::CorpusError::LabelNotFound(label.to_string()))?;
            out.push(corpus::ingest(&decl.path, decl.format, &decl.label, self.tokenizer.as_ref())?);
        }
        Ok(out)
    }

    fn eval_stream(&self, corpus: &Corpus, max_tokens: Option<usize>) -> Vec<TokenId> {
        let mut s: Vec<TokenId> = Vec::new();
        for d in corpus.documents() {
            s.extend(self.tokenizer.ids(&d.text));
            s.push(tokenizer::DOC_SEPARATOR);
            if max_tokens.is_some_and(|m| s.len() >= m) {
                break;
            }
        }
        if let Some(m) = max_tokens {
            s.truncate(m);
        }
        s
    }
}

/// Parse arguments and run. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json serializes"));
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

/// Run a parsed command and return its JSON summary.
pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    match &cli.command {
        Command::Ingest(a) => {
            if let Some(path) = &a.path {
                let label = a.label.clone().unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
                let format: CorpusFormat = a.format.parse()?;
                cfg.corpora.retain(|c| c.label != label);
                cfg.corpora.push(CorpusDecl { label, path: path.clone(), format });
            }
        }
        Command::Fit(a) => merge_fit_args(&mut cfg, a),
        _ => {}
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    let stamp = Stamp::new(&cfg.digest());
    if g.dry_run {
        return Ok(json!({
            "dry_run": true,
            "valid": true,
            "command": command_name(&cli.command),
            "config_digest": stamp.config_digest,
            "corpora": cfg.corpora.iter().map(|c| &c.label).collect::<Vec<_>>(),
            "mixtures": cfg.mixtures.iter().map(|m| &m.id).collect::<Vec<_>>(),
        }));
    }
    let tokenizer = tokenizer::tokenizer_by_id(&cfg.tokenizer).expect("validated");
    let parallelism = g.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let ctx = Ctx { cfg, stamp, tokenizer, parallelism };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Ingest(_) => cmd_ingest(&ctx),
        Command::Mix(a) => cmd_mix(&ctx, a),
        Command::Stats => cmd_stats(&ctx),
        Command::Generate => cmd_generate(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Fit(_) => cmd_fit(&ctx),
        Command::Search => cmd_search(&ctx),
        Command::Report(a) => cmd_report(&ctx, a),
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Mix(_) => "mix",
        Command::Stats => "stats",
        Command::Generate => "generate",
        Command::Train => "train",
        Command::Fit(_) => "fit",
        Command::Search => "search",
        Command::Report(_) => "report",
    }
}

fn merge_fit_args(cfg: &mut PipelineConfig, a: &FitArgs) {
    let f = cfg.fit.get_or_insert_with(FitSettings::default);
    macro_rules! take {
        ($($field:ident),*) => { $( if a.$field.is_some() { f.$field = a.$field.clone(); } )* };
    }
    take!(form, records, mixture, fit_min_d, fit_max_d, fit_min_n, fit_max_n, holdout_min_d, holdout_max_d, holdout_min_n, holdout_max_n);
}

fn cmd_ingest(ctx: &Ctx) -> Result<Value, CliError> {
    if ctx.cfg.corpora.is_empty() {
        return Err(CliError::Usage("nothing to ingest: pass --path or declare corpora in the config".into()));
    }
    let labels: Vec<&str> = ctx.cfg.corpora.iter().map(|c| c.label.as_str()).collect();
    let corpora = ctx.load_corpora(&labels)?;
    let mut handles = Vec::new();
    for c in &corpora {
        let v = stamped(serde_json::to_value(&c.handle).expect("handle serializes"), &ctx.stamp);
        write_json(&ctx.out(&format!("corpora/{}.json", file_safe(c.label()))), &v)?;
        handles.push(v);
    }
    Ok(json!({ "command": "ingest", "corpora": handles }))
}

fn cmd_mix(ctx: &Ctx, a: &MixArgs) -> Result<Value, CliError> {
    let mixtures: Vec<&MixtureDecl> = ctx.cfg.mixtures.iter().filter(|m| a.mixture.as_ref().is_none_or(|id| &m.id == id)).collect();
    if mixtures.is_empty() {
        return Err(CliError::Usage("no mixtures selected".into()));
    }
    let labels: Vec<&str> = mixtures.iter().flat_map(|m| m.components.iter().map(|c| c.label.as_str())).collect();
    let corpora = ctx.load_corpora(&labels)?;
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let mut out = Vec::new();
    for m in mixtures {
        let manifest = corpus::mix(&ctx.cfg.mixture_spec(m), &refs, ctx.tokenizer.as_ref())?;
        let stem = file_safe(&m.id);
        let manifest_path = ctx.out(&format!("mixtures/{stem}.manifest.json"));
        write_json(&manifest_path, &stamped(serde_json::to_value(&manifest).expect("manifest serializes"), &ctx.stamp))?;
        let mut docs = String::new();
        for r in &manifest.order {
            let c = refs.iter().find(|c| c.label() == r.label).expect("mixed corpus present");
            let d = c.get(&r.id).expect("mixed document present");
            docs.push_str(&json!({ "id": format!("{}/{}", r.label, r.id), "text": d.text, "source": r.label }).to_string());
            docs.push('\n');
        }
        let docs_path = ctx.out(&format!("mixtures/{stem}.jsonl"));
        write(&docs_path, docs)?;
        out.push(json!({
            "id": m.id,
            "manifest": manifest_path,
            "documents": docs_path,
            "total_tokens": manifest.total_tokens,
            "achieved_fractions": manifest.achieved_fractions,
            "output_digest": manifest.output_digest,
        }));
    }
    Ok(json!({ "command": "mix", "mixtures": out }))
}

fn cmd_stats(ctx: &Ctx) -> Result<Value, CliError> {
    let settings = ctx.cfg.stats.clone().unwrap_or_default();
    let mut zipf_labels: Vec<&str> = settings.corpora.iter().map(String::as_str).collect();
    if zipf_labels.is_empty() {
        zipf_labels = ctx.cfg.corpora.iter().map(|c| c.label.as_str()).collect();
    }
    let mut needed = zipf_labels.clone();
    needed.extend(settings.pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]));
    let corpora = ctx.load_corpora(&needed)?;
    let tables: BTreeMap<String, stats::UnigramTable> = corpora
        .iter()
        .map(|c| {
            let shards: Vec<Vec<String>> = c.documents().iter().map(|d| ctx.tokenizer.pieces(&d.text)).collect();
            stats::count_unigrams_sharded(c.label(), &shards).map(|t| (c.label().to_string(), t))
        })
        .collect::<Result<_, _>>()?;
    let mut summary = json!({ "command": "stats" });
    let mut reports = Vec::new();

    let mut zipf_rows = Vec::new();
    let mut fits = BTreeMap::new();
    for label in &zipf_labels {
        let table = &tables[*label];
        let fit = stats::fit_zipf(table, settings.zipf_top_k);
        for (i, (_, count)) in table.ranked().into_iter().take(settings.zipf_top_k).enumerate() {
            zipf_rows.push(report::ZipfRow {
                corpus: label.to_string(),
                rank: i as u64 + 1,
                count,
                fit: fit.as_ref().ok().map(|f| f.predict(i + 1)),
            });
        }
        fits.insert(label.to_string(), match fit {
            Ok(f) => serde_json::to_value(f).expect("fit serializes"),
            Err(e) => json!({ "error": e.to_string() }),
        });
    }
    if !zipf_rows.is_empty() {
        let dir = ctx.out("stats");
        write_json(&dir.join("zipf.json"), &stamped(json!({ "fits": fits }), &ctx.stamp))?;
        reports.push(report::emit_report(&ReportData::Zipf(zipf_rows), &ctx.stamp, &dir, "zipf")?);
    }
    summary["zipf"] = json!(fits);

    let mut kl_rows = Vec::new();
    let mut divergences = Vec::new();
    for (test, train) in &settings.pairs {
        let d = stats::kl_divergence(&tables[test], &tables[train], settings.kl_eps)?;
        let gaps = stats::coverage_gaps_with_eps(&tables[test], &tables[train], settings.gap_min_test_freq, settings.gap_max_train_freq, settings.kl_eps)?;
        let mut csv = format!("# {} {} config {}\ntoken,test_frequency,train_frequency,ratio\n", report::TOOL_NAME, ctx.stamp.tool_version, ctx.stamp.config_digest);
        let mut w = csv::Writer::from_writer(Vec::new());
        for g in &gaps {
            w.write_record([g.token.clone(), report::fmt_sig(g.test_frequency), report::fmt_sig(g.train_frequency), report::fmt_sig(g.ratio)])
                .expect("in-memory write");
        }
        csv.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        write(&ctx.out(&format!("stats/gaps_{}_{}.csv", file_safe(test), file_safe(train))), csv)?;
        kl_rows.push(report::KlRow { test: test.clone(), train: train.clone(), kl_nats: d.kl_nats });
        divergences.push(serde_json::to_value(&d).expect("report serializes"));
    }
    if !kl_rows.is_empty() {
        let dir = ctx.out("stats");
        write_json(&dir.join("kl.json"), &stamped(json!({ "divergences": divergences }), &ctx.stamp))?;
        reports.push(report::emit_report(&ReportData::KlBar(kl_rows), &ctx.stamp, &dir, "kl_bar")?);
    }
    summary["kl"] = json!(divergences);

    let mut loss_rows = Vec::new();
    for log in &settings.loss_logs {
        let records = stats::read_loss_log(log)?;
        let series = log.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (position, loss) in stats::rolling_loss(&records, settings.window)? {
            loss_rows.push(report::TokenLossRow { series: series.clone(), position, loss });
        }
    }
    if !loss_rows.is_empty() {
        reports.push(report::emit_report(&ReportData::TokenLoss(loss_rows), &ctx.stamp, &ctx.out("stats"), "token_loss")?);
    }
    summary["reports"] = json!(reports);
    Ok(summary)
}

fn cmd_generate(ctx: &Ctx) -> Result<Value, CliError> {
    let g = ctx.cfg.generation.as_ref().ok_or_else(|| CliError::Config(vec!["missing [generation] section".into()]))?;
    let source = ctx.load_corpora(&[g.source_corpus.as_str()])?.remove(0);
    let docs = &source.documents()[..g.max_docs.unwrap_or(usize::MAX).min(source.documents().len())];
    let mut tasks = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        for k in &g.kinds {
            match k.to_ascii_uppercase().as_str() {
                "HQ" => tasks.push(GenerationTask::Rephrase { doc_id: d.id.clone(), text: d.text.clone(), kind: PromptKind::Hq }),
                "QA" => tasks.push(GenerationTask::Rephrase { doc_id: d.id.clone(), text: d.text.clone(), kind: PromptKind::Qa }),
                _ => tasks.push(GenerationTask::Textbook { doc_id: d.id.clone(), text: d.text.clone(), audience: g.audiences[i % g.audiences.len()] }),
            }
        }
    }
    let mut filters = FilterSet::default();
    if let Some(min) = g.min_tokens {
        let with_min = |p: FilterPolicy| FilterPolicy::new(min, p.max_tokens);
        filters = FilterSet { hq: with_min(filters.hq)?, qa: with_min(filters.qa)?, outline: with_min(filters.outline)?, chapter: with_min(filters.chapter)? };
    }
    let endpoint = synthgen::HttpEndpoint::from_config(&g.endpoint)?;
    let ledger = g.ledger.clone().unwrap_or_else(|| ctx.out("generation/jobs.jsonl"));
    let store = synthgen::JobStore::open(&ledger)?;
    let report = synthgen::run_sweep(&tasks, &g.endpoint, &filters, &endpoint, ctx.tokenizer.as_ref(), Some(&store), None)?;
    let mut exports = Vec::new();
    for (name, kinds) in [("HQ", &[PromptKind::Hq][..]), ("QA", &[PromptKind::Qa]), ("TXBK", &[PromptKind::TxbkOutline, PromptKind::TxbkChapter])] {
        let jobs: Vec<_> = report.jobs.iter().filter(|j| kinds.contains(&j.kind)).cloned().collect();
        if synthgen::exportable(&jobs).is_empty() {
            continue;
        }
        let handle = synthgen::export(&jobs, &ctx.out(&format!("generation/{name}.jsonl")), &g.endpoint, ctx.tokenizer.as_ref())?;
        exports.push(handle);
    }
    let mut status_counts: BTreeMap<String, usize> = BTreeMap::new();
    for j in &report.jobs {
        *status_counts.entry(format!("{:?}", j.status).to_lowercase()).or_insert(0) += 1;
    }
    Ok(json!({
        "command": "generate",
        "config_digest": ctx.stamp.config_digest,
        "ledger": ledger,
        "jobs": report.jobs.len(),
        "status_counts": status_counts,
        "books_accepted": report.books.iter().filter(|b| b.accepted).count(),
        "exports": exports,
    }))
}

fn cmd_train(ctx: &Ctx) -> Result<Value, CliError> {
    let s = ctx.cfg.surrogate.as_ref().ok_or_else(|| CliError::Config(vec!["missing [surrogate] section".into()]))?;
    let mixtures: Vec<CurveMixture> = ctx
        .cfg
        .mixtures
        .iter()
        .filter(|m| s.mixtures.is_empty() || s.mixtures.contains(&m.id))
        .map(|m| CurveMixture { id: m.id.clone(), spec: ctx.cfg.mixture_spec(m) })
        .collect();
    if mixtures.is_empty() {
        return Err(CliError::Config(vec!["surrogate: no mixtures to train on".into()]));
    }
    let mut labels: Vec<&str> = mixtures.iter().flat_map(|m| m.spec.components.iter().map(|c| c.label.as_str())).collect();
    labels.push(&s.eval_corpus);
    let corpora = ctx.load_corpora(&labels)?;
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let eval_corpus = refs.iter().find(|c| c.label() == s.eval_corpus).expect("loaded");
    let eval = ctx.eval_stream(eval_corpus, s.eval_max_tokens);
    let capacities: Vec<Capacity> = s.orders.iter().flat_map(|&order| s.prune_min_counts.iter().map(move |&p| Capacity { order, prune_min_count: p })).collect();
    let records = surrogate::run_curve(&mixtures, &s.budgets, &capacities, &refs, ctx.tokenizer.as_ref(), &eval)?;
    let path = ctx.out("runs.csv");
    write(&path, format!("# {} {} config {}\n{}", report::TOOL_NAME, ctx.stamp.tool_version, ctx.stamp.config_digest, scaling::records_to_csv(&records)))?;
    Ok(json!({ "command": "train", "records": path, "runs": records.len(), "config_digest": ctx.stamp.config_digest }))
}

fn filter_from(min_n: Option<f64>, max_n: Option<f64>, min_d: Option<f64>, max_d: Option<f64>) -> RecordFilter {
    RecordFilter { min_n, max_n, min_d, max_d }
}

fn cmd_fit(ctx: &Ctx) -> Result<Value, CliError> {
    let f = ctx.cfg.fit.clone().unwrap_or_default();
    let form = f.form.unwrap_or(ScalingForm::Data);
    let records_path = f.records.clone().unwrap_or_else(|| ctx.out("runs.csv"));
    let records = scaling::read_records_csv(&records_path)?;
    let fit_filter = filter_from(f.fit_min_n, f.fit_max_n, f.fit_min_d, f.fit_max_d);
    let has_holdout = f.holdout_min_d.is_some() || f.holdout_max_d.is_some() || f.holdout_min_n.is_some() || f.holdout_max_n.is_some();
    let holdout_filter = has_holdout.then(|| filter_from(f.holdout_min_n, f.holdout_max_n, f.holdout_min_d, f.holdout_max_d));

    let mut mixture_ids: Vec<String> = Vec::new();
    for r in &records {
        if !mixture_ids.contains(&r.mixture_id) && f.mixture.as_ref().is_none_or(|m| m == &r.mixture_id) {
            mixture_ids.push(r.mixture_id.clone());
        }
    }
    if mixture_ids.is_empty() {
        return Err(CliError::Scaling(scaling::ScalingError::InsufficientPoints { form, needed: form.min_points(), have: 0 }));
    }
    let dir = ctx.out("fits");
    let mut fits = Vec::new();
    let mut outputs = Vec::new();
    for id in &mixture_ids {
        let recs: Vec<RunRecord> = records.iter().filter(|r| &r.mixture_id == id).cloned().collect();
        let fitted = scaling::fit(&recs, form, &fit_filter, holdout_filter.as_ref())?;
        let stem = format!("{}_{}", file_safe(id), form);
        let fit_path = dir.join(format!("{stem}.json"));
        write_json(&fit_path, &stamped(serde_json::to_value(&fitted).expect("fit serializes"), &ctx.stamp))?;

        let fit_recs: Vec<&RunRecord> = recs.iter().filter(|r| fit_filter.matches(r)).collect();
        let hold_recs: Vec<&RunRecord> = holdout_filter.as_ref().map_or(Vec::new(), |h| recs.iter().filter(|r| h.matches(r)).collect());
        let ext_path = dir.join(format!("{stem}_extrapolation.csv"));
        write(&ext_path, extrapolation_csv(ctx, &fitted, &fit_recs, &hold_recs)?)?;

        let x_of = |r: &RunRecord| if form == ScalingForm::Model { r.n_params as f64 } else { r.d_tokens as f64 };
        let mut rows = Vec::new();
        if form == ScalingForm::Joint {
            let mut ns: Vec<u64> = fit_recs.iter().chain(&hold_recs).map(|r| r.n_params).collect();
            ns.sort_unstable();
            ns.dedup();
            for n in ns {
                let pts = |rs: &[&RunRecord]| rs.iter().filter(|r| r.n_params == n).map(|r| (x_of(r), r.loss_nats)).collect::<Vec<_>>();
                let (fp, hp) = (pts(&fit_recs), pts(&hold_recs));
                if fp.is_empty() {
                    continue;
                }
                rows.extend(report::scaling_rows(&fitted, &format!("{id} N={n}"), &fp, &hp, 48, Some(n as f64)));
            }
        } else {
            let fp: Vec<(f64, f64)> = fit_recs.iter().map(|r| (x_of(r), r.loss_nats)).collect();
            let hp: Vec<(f64, f64)> = hold_recs.iter().map(|r| (x_of(r), r.loss_nats)).collect();
            rows = report::scaling_rows(&fitted, id, &fp, &hp, 48, None);
        }
        let curve = report::emit_report(&ReportData::ScalingCurves(rows), &ctx.stamp, &dir, &format!("{stem}_curve"))?;
        outputs.push(json!({ "mixture_id": id, "fit": fit_path, "extrapolation": ext_path, "curve_csv": curve.data_csv_path, "curve_svg": curve.figure_svg_path }));
        fits.push(fitted);
    }
    let mut summary = json!({ "command": "fit", "form": form, "fits": fits, "outputs": outputs });
    if form != ScalingForm::Model {
        let table = if form == ScalingForm::Joint { scaling::irreducible_table(&fits)? } else { scaling::asymptote_table(&fits)? };
        let bars = table.iter().map(|r| report::IrreducibleBarRow { mixture_id: r.mixture_id.clone(), e: r.e }).collect();
        let bar = report::emit_report(&ReportData::IrreducibleBar(bars), &ctx.stamp, &dir, &format!("irreducible_{form}"))?;
        summary["irreducible"] = json!({ "table": table, "csv": bar.data_csv_path, "svg": bar.figure_svg_path });
    }
    Ok(summary)
}

/// Observed vs predicted loss for every fit and holdout record, plus a grid
/// extending one decade past the largest observed value.
fn extrapolation_csv(ctx: &Ctx, fit: &scaling::PowerLawFit, fit_recs: &[&RunRecord], hold_recs: &[&RunRecord]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mixture_id", "set", "n", "d", "observed_loss", "predicted_loss"]).expect("in-memory write");
    let pred = |n: f64, d: f64| scaling::predict(fit, Some(n), Some(d));
    for (set, recs) in [("fit", fit_recs), ("holdout", hold_recs)] {
        for r in recs {
            let p = pred(r.n_params as f64, r.d_tokens as f64)?;
            w.write_record([fit.mixture_id.clone(), set.into(), r.n_params.to_string(), r.d_tokens.to_string(), report::fmt_sig(r.loss_nats), report::fmt_sig(p)])
                .expect("in-memory write");
        }
    }
    let all: Vec<&&RunRecord> = fit_recs.iter().chain(hold_recs).collect();
    let over_n = fit.form == ScalingForm::Model;
    let axis = |r: &RunRecord| if over_n { r.n_params as f64 } else { r.d_tokens as f64 };
    let lo = all.iter().map(|r| axis(r)).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|r| axis(r)).fold(0.0, f64::max);
    let fixed = if fit.form == ScalingForm::Joint { all.iter().map(|r| r.n_params).max().map(|n| n as f64) } else { None };
    for (x, l) in scaling::extrapolate(fit, &scaling::log_space(lo, hi * 10.0, 16), over_n, fixed)? {
        let (n, d) = if over_n { (x, fixed.unwrap_or(0.0)) } else { (fixed.unwrap_or(0.0), x) };
        let fmt = |v: f64| if v == 0.0 { String::new() } else { format!("{:.0}", v) };
        w.write_record([fit.mixture_id.clone(), "grid".into(), fmt(n), fmt(d), String::new(), report::fmt_sig(l)]).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
    Ok(format!("# {} {} config {}\n{body}", report::TOOL_NAME, ctx.stamp.tool_version, ctx.stamp.config_digest))
}

fn cmd_search(ctx: &Ctx) -> Result<Value, CliError> {
    let s = ctx.cfg.sweep.as_ref().ok_or_else(|| CliError::Config(vec!["missing [sweep] section".into()]))?;
    let grid = match (&s.ratios, s.mode) {
        (Some(r), _) => RatioGrid::new(r.clone())?,
        (None, SweepMode::Grid) => RatioGrid::fine_grained(),
        (None, SweepMode::Ablation) => RatioGrid::generator_ablation(),
    };
    let corpora;
    let surrogate_eval;
    let command_eval;
    let replay_eval;
    let evaluator: &dyn Evaluator = match &s.evaluator {
        EvaluatorDecl::Surrogate { eval_corpus, prune_min_count, eval_max_tokens } => {
            let mut labels: Vec<&str> = vec![s.natural.as_str(), eval_corpus.as_str()];
            labels.extend(s.synthetic.iter().map(String::as_str));
            corpora = ctx.load_corpora(&labels)?;
            let eval_c = corpora.iter().find(|c| c.label() == eval_corpus).expect("loaded");
            surrogate_eval = SurrogateEvaluator {
                corpora: corpora.iter().collect(),
                tokenizer: ctx.tokenizer.as_ref(),
                eval_stream: ctx.eval_stream(eval_c, *eval_max_tokens),
                prune_min_count: *prune_min_count,
            };
            &surrogate_eval
        }
        EvaluatorDecl::Command { program, args } => {
            command_eval = CommandEvaluator { program: program.clone(), args: args.clone() };
            &command_eval
        }
        EvaluatorDecl::Replay { path } => {
            replay_eval = ReplayEvaluator::from_csv(path)?;
            &replay_eval
        }
    };
    let config = SearchConfig {
        natural_label: s.natural.clone(),
        seed: ctx.cfg.seed,
        parallelism: ctx.parallelism,
        checkpoint: Some(s.checkpoint.clone().unwrap_or_else(|| ctx.out("search/checkpoint.jsonl"))),
        cancel: None,
    };
    let cells: Vec<mixsearch::SearchCell> = match s.mode {
        SweepMode::Grid => {
            let specs: Vec<CellSpec> = s
                .synthetic
                .iter()
                .flat_map(|l| s.capacities.iter().flat_map(move |&n| s.budgets.iter().map(move |&d| CellSpec::new(l, n, d))))
                .collect();
            mixsearch::run_grid(&grid, &specs, evaluator, &config)?.cells
        }
        SweepMode::Ablation => {
            let labels: Vec<&str> = s.synthetic.iter().map(String::as_str).collect();
            let mut all = Vec::new();
            for &n in &s.capacities {
                for &d in &s.budgets {
                    all.extend(mixsearch::ablation_sweep(&labels, &grid, evaluator, n, d, &config)?.cells);
                }
            }
            all
        }
    };
    let dir = ctx.out("search");
    for c in &cells {
        let path = dir.join(format!("cells/{}_n{}_d{}.json", file_safe(&c.synthetic_label), c.n_capacity, c.d_budget));
        write_json(&path, &stamped(serde_json::to_value(c).expect("cell serializes"), &ctx.stamp))?;
    }
    let rows = mixsearch::sweep_rows(&cells);
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).expect("in-memory write");
    }
    let sweep_csv = dir.join("sweep.csv");
    write(
        &sweep_csv,
        format!("# {} {} config {}\n{}", report::TOOL_NAME, ctx.stamp.tool_version, ctx.stamp.config_digest, String::from_utf8(w.into_inner().expect("flush")).expect("utf8")),
    )?;
    let heat = report::heatmap_from_sweep(&rows);
    let heatmap = if heat.is_empty() { None } else { Some(report::emit_report(&ReportData::RatioHeatmap(heat), &ctx.stamp, &dir, "ratio_heatmap")?) };
    Ok(json!({
        "command": "search",
        "mode": s.mode,
        "sweep_csv": sweep_csv,
        "heatmap": heatmap,
        "cells": cells.iter().map(|c| json!({
            "synthetic_label": c.synthetic_label,
            "n": c.n_capacity,
            "d": c.d_budget,
            "best_ratio": c.best_ratio,
            "failures": c.failures.len(),
        })).collect::<Vec<_>>(),
    }))
}

fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> Result<Value, CliError> {
    let kind: ReportKind = a.kind.parse()?;
    let text = read(&a.input)?;
    let (data, stamp) = report::from_csv(kind, &text)?;
    let stamp = stamp.unwrap_or_else(|| ctx.stamp.clone());
    let r = report::emit_report(&data, &stamp, &ctx.out("reports"), kind.as_str())?;
    Ok(json!({ "command": "report", "kind": kind, "csv": r.data_csv_path, "svg": r.figure_svg_path, "config_digest": stamp.config_digest }))
}
