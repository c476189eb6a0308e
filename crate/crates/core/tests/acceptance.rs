//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clap::Parser;
use rand::Rng;

use synthlab::cli::{self, Cli};
use synthlab::corpus::{self, Corpus, CorpusFormat, MixtureSpec};
use synthlab::mixsearch::{self, CellSpec, EvalError, EvalPoint, RatioGrid, SearchConfig};
use synthlab::scaling::{self, PowerLawFit, RecordFilter, RunRecord, ScalingForm};
use synthlab::stats::{self, TokenLossRecord, UnigramTable};
use synthlab::surrogate;
use synthlab::synthgen::{self, Audience, GenerationJob, JobStatus, PromptKind, PromptTemplate};
use synthlab::tokenizer::{TokenId, WordPunctTokenizer};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// 1. Planted joint coefficients, noise-free 8x8 grid.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ns: Vec<u64> = scaling::log_space(10.0, 1e5, 8).iter().map(|v| v.round() as u64).collect();
    let ds: Vec<u64> = scaling::log_space(100.0, 1e6, 8).iter().map(|v| v.round() as u64).collect();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = common::rng(seed);
        let (a, alpha) = (r.gen_range(0.5..5.0), r.gen_range(0.1..1.0));
        let (b, beta) = (r.gen_range(0.5..5.0), r.gen_range(0.1..1.0));
        let e = r.gen_range(0.5..3.0);
        let mut recs = Vec::new();
        for &n in &ns {
            for &d in &ds {
                let l = e + a / (n as f64).powf(alpha) + b / (d as f64).powf(beta);
                recs.push(RunRecord::new("planted", n, d, l));
            }
        }
        let f = scaling::fit(&recs, ScalingForm::Joint, &RecordFilter::all(), None).map_err(|e| format!("seed {seed}: {e}"))?;
        let errs = [rel(f.a, a), rel(f.alpha, alpha), rel(f.b, b), rel(f.beta, beta), rel(f.e, e)];
        let m = errs.iter().cloned().fold(0.0, f64::max);
        ensure(f.converged && m < 1e-3, || format!("seed {seed}: max relative error {m:.3e}, converged {}", f.converged))?;
        worst = worst.max(m);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100 planted sets, worst relative error {worst:.2e}, {secs:.2}s"))
}

fn normal(r: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// 2. Holdout two octaves beyond a four-decade fit range.
fn criterion_2() -> Outcome {
    let fit_ds = scaling::log_space(1e6, 1e10, 13);
    let holdout_d = 4e10;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(1000 + seed);
        let beta = r.gen_range(0.1..1.0);
        let e = r.gen_range(0.5..3.0);
        let b = r.gen_range(0.5..2.0) * e * 1e6f64.powf(beta);
        let mut recs: Vec<RunRecord> = Vec::new();
        for &d in fit_ds.iter().chain([holdout_d].iter()) {
            let l = (e + b / d.powf(beta)) * (0.002 * normal(&mut r)).exp();
            recs.push(RunRecord::new("planted", 1, d.round() as u64, l));
        }
        let fit_f = RecordFilter { max_d: Some(1e10 * 1.001), ..RecordFilter::all() };
        let hold_f = RecordFilter { min_d: Some(2e10), ..RecordFilter::all() };
        let f = scaling::fit(&recs, ScalingForm::Data, &fit_f, Some(&hold_f)).map_err(|e| format!("seed {seed}: {e}"))?;
        let rm = f.holdout_rmabe_percent.ok_or("no holdout score")?;
        ensure(rm < 0.5, || format!("seed {seed}: holdout RMABE {rm:.3}%"))?;
        worst = worst.max(rm);
    }
    Ok(format!("20 seeds, worst holdout RMABE {worst:.3}%"))
}

// 3. Worked speedup example.
fn criterion_3() -> Outcome {
    let a = PowerLawFit::from_coefficients(ScalingForm::Data, 0.0, 0.0, 2.0, 0.3, 1.5);
    let b = PowerLawFit::from_coefficients(ScalingForm::Data, 0.0, 0.0, 2.0, 0.3, 1.6);
    let got = scaling::speedup_factor(&a, &b, 1.65).map_err(|e| e.to_string())?;
    let want = 3f64.powf(1.0 / 0.3);
    ensure((got - want).abs() < 1e-9, || format!("factor {got} vs {want}"))?;
    ensure(scaling::speedup_factor(&a, &b, 1.4).is_err(), || "target below E accepted".into())?;
    Ok(format!("factor {got:.9} (expected 3^(1/0.3) = {want:.9}); target 1.4 rejected"))
}

// 4. Grid, planted minima, interrupted-sweep resume.
fn criterion_4() -> Outcome {
    let grid = RatioGrid::fine_grained();
    let listed = [0.0, 0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.50, 1.0];
    ensure(grid.ratios() == listed, || format!("default grid {:?}", grid.ratios()))?;

    // Per cell: a planted index and an asymmetric convex bowl over grid index.
    let mut r = common::rng(4);
    let cells: Vec<CellSpec> = (0..50).map(|i| CellSpec::new(&format!("gen{}", i % 5), 100 + i as u64, 1000 * (1 + i as u64))).collect();
    let planted: HashMap<u64, (usize, f64, f64, f64)> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.n_capacity, (i % listed.len(), r.gen_range(1.0..4.0), r.gen_range(0.01..1.0), r.gen_range(0.0..0.5))))
        .collect();
    let bowl = |p: &EvalPoint| -> Result<f64, EvalError> {
        let (k, base, curv, slope) = planted[&p.n_capacity];
        let i = listed.iter().position(|&x| x == p.ratio).expect("grid point") as f64;
        let dx = i - k as f64;
        Ok(base + curv * dx * dx + slope * dx.abs())
    };
    let out = mixsearch::run_grid(&grid, &cells, &bowl, &SearchConfig::new("nat", 1)).map_err(|e| e.to_string())?;
    let mut covered = HashSet::new();
    for c in &out.cells {
        let (k, ..) = planted[&c.n_capacity];
        ensure(c.best_ratio == Some(listed[k]), || format!("cell n={} best {:?}, planted {}", c.n_capacity, c.best_ratio, listed[k]))?;
        covered.insert(k);
    }
    ensure(covered.len() == listed.len(), || "not every grid point planted".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let counting = |count: &'static AtomicUsize, cancel: Option<(Arc<AtomicBool>, usize)>| {
        move |p: &EvalPoint| {
            let n = count.fetch_add(1, Ordering::SeqCst) + 1;
            if let Some((flag, at)) = &cancel {
                if n >= *at {
                    flag.store(true, Ordering::SeqCst);
                }
            }
            bowl(p)
        }
    };
    let full_path = dir.path().join("full.jsonl");
    let full_count: &'static AtomicUsize = Box::leak(Box::default());
    let mut cfg = SearchConfig::new("nat", 1);
    cfg.checkpoint = Some(full_path.clone());
    mixsearch::run_grid(&grid, &cells, &counting(full_count, None), &cfg).map_err(|e| e.to_string())?;

    let resumed_path = dir.path().join("resumed.jsonl");
    let flag = Arc::new(AtomicBool::new(false));
    let first_count: &'static AtomicUsize = Box::leak(Box::default());
    let mut cfg = SearchConfig::new("nat", 1);
    cfg.checkpoint = Some(resumed_path.clone());
    cfg.cancel = Some(flag.clone());
    let first = mixsearch::run_grid(&grid, &cells, &counting(first_count, Some((flag.clone(), 173))), &cfg).map_err(|e| e.to_string())?;
    ensure(first.interrupted, || "sweep was not interrupted".into())?;
    let second_count: &'static AtomicUsize = Box::leak(Box::default());
    cfg.cancel = None;
    let second = mixsearch::run_grid(&grid, &cells, &counting(second_count, None), &cfg).map_err(|e| e.to_string())?;
    let total = cells.len() * grid.len();
    let (a, b) = (first_count.load(Ordering::SeqCst), second_count.load(Ordering::SeqCst));
    ensure(a + b == total && second.reused == a, || format!("evaluations {a} + {b} for {total} points, reused {}", second.reused))?;
    let (x, y) = (std::fs::read(&full_path).map_err(|e| e.to_string())?, std::fs::read(&resumed_path).map_err(|e| e.to_string())?);
    ensure(x == y, || "resumed checkpoint ledger differs from uninterrupted one".into())?;
    ensure(second.cells == out.cells, || "resumed cells differ".into())?;
    Ok(format!("grid matches; 50/50 planted minima over all 10 points; resumed after {a}/{total} with {b} new evaluations, ledgers identical ({} bytes)", x.len()))
}

/// Independent brute-force evaluation of the discounting recursion.
fn brute_prob(stream: &[TokenId], order: usize, d: f64, history: &[TokenId], token: TokenId) -> f64 {
    let vocab: HashSet<TokenId> = stream.iter().copied().collect();
    let mut p = 1.0 / (vocab.len() as f64 + 1.0);
    let ctx_len = history.len().min(order - 1);
    let hist = &history[history.len() - ctx_len..];
    for k in 1..=ctx_len + 1 {
        let ctx = &hist[hist.len() - (k - 1)..];
        let mut c_hw = 0u64;
        let mut c_h = 0u64;
        let mut followers = HashSet::new();
        for w in stream.windows(k) {
            if &w[..k - 1] == ctx {
                c_h += 1;
                followers.insert(w[k - 1]);
                if w[k - 1] == token {
                    c_hw += 1;
                }
            }
        }
        if c_h > 0 {
            p = (c_hw as f64 - d).max(0.0) / c_h as f64 + d * followers.len() as f64 / c_h as f64 * p;
        }
    }
    p
}

fn compare_corpus(stream: &[TokenId], worst: &mut f64) -> Result<usize, String> {
    let symbols: Vec<TokenId> = (1..=4).map(TokenId).collect(); // 4 is out of vocabulary
    let mut checked = 0;
    for order in 1..=2usize {
        if stream.len() < order {
            continue;
        }
        let m = surrogate::train(stream, order, 1).map_err(|e| e.to_string())?;
        let mut histories: Vec<Vec<TokenId>> = vec![vec![]];
        if order == 2 {
            histories.extend(symbols.iter().map(|&s| vec![s]));
        }
        for h in &histories {
            for &t in &symbols {
                let (got, want) = (m.prob(h, t), brute_prob(stream, order, m.discount(), h, t));
                let diff = (got - want).abs();
                *worst = worst.max(diff);
                ensure(diff <= 1e-12, || format!("stream {stream:?} order {order} history {h:?} token {t:?}: {got} vs {want}"))?;
                checked += 1;
            }
        }
    }
    Ok(checked)
}

// 5. Surrogate oracle and normalization.
fn criterion_5() -> Outcome {
    let mut worst = 0.0;
    let mut checked = 0usize;
    let mut corpora = 0usize;
    const EXHAUSTIVE: usize = 10;
    for len in 1..=EXHAUSTIVE {
        let mut s = vec![TokenId(1); len];
        for code in 0..3usize.pow(len as u32) {
            let mut c = code;
            for slot in s.iter_mut() {
                *slot = TokenId(1 + (c % 3) as u64);
                c /= 3;
            }
            checked += compare_corpus(&s, &mut worst)?;
            corpora += 1;
        }
    }
    let mut r = common::rng(5);
    let sampled = 20_000;
    for _ in 0..sampled {
        let len = r.gen_range(EXHAUSTIVE + 1..=20);
        let s: Vec<TokenId> = (0..len).map(|_| TokenId(r.gen_range(1..=3))).collect();
        checked += compare_corpus(&s, &mut worst)?;
    }

    let stream: Vec<TokenId> = (0..20_000).map(|_| TokenId(r.gen_range(1..=30))).collect();
    let m = surrogate::train(&stream, 3, 1).map_err(|e| e.to_string())?;
    let vocab = m.vocab().to_vec();
    let mut worst_norm = 0.0f64;
    for _ in 0..1_000_000 {
        let h = [TokenId(r.gen_range(1..=31)), TokenId(r.gen_range(1..=31))];
        let total: f64 = vocab.iter().map(|&t| m.prob(&h, t)).sum::<f64>() + m.prob_unknown(&h);
        worst_norm = worst_norm.max((total - 1.0).abs());
    }
    ensure(worst_norm <= 1e-9, || format!("normalization error {worst_norm:.3e}"))?;
    Ok(format!(
        "{corpora} exhaustive corpora (length <= {EXHAUSTIVE}) + {sampled} sampled (length {}..=20), {checked} probabilities, max diff {worst:.1e}; 1M contexts normalized within {worst_norm:.1e}",
        EXHAUSTIVE + 1
    ))
}

fn random_table(r: &mut impl Rng, label: &str) -> UnigramTable {
    let size = r.gen_range(1..60);
    let counts: Vec<(String, u64)> = (0..size).map(|_| (format!("w{}", r.gen_range(0..80)), r.gen_range(0..2000))).collect();
    UnigramTable::from_counts(label, counts)
}

// 6. KL, Zipf and rolling-average oracles.
fn criterion_6() -> Outcome {
    let mut r = common::rng(6);
    let mut worst_kl = 0.0f64;
    let mut pairs = 0;
    while pairs < 1000 {
        let (p, q) = (random_table(&mut r, "test"), random_table(&mut r, "train"));
        if p.total == 0 && q.total == 0 {
            continue;
        }
        let eps = [1e-9, 1e-6, 1e-3, 0.5, 1.0][r.gen_range(0..5)];
        let got = stats::kl_divergence(&p, &q, eps).map_err(|e| e.to_string())?.kl_nats;
        let union: HashSet<&String> = p.counts.keys().chain(q.counts.keys()).collect();
        let u = union.len() as f64;
        let (pd, qd) = (p.total as f64 + eps * u, q.total as f64 + eps * u);
        let mut want = 0.0;
        for t in &union {
            let pt = (*p.counts.get(*t).unwrap_or(&0) as f64 + eps) / pd;
            let qt = (*q.counts.get(*t).unwrap_or(&0) as f64 + eps) / qd;
            want += pt * (pt.ln() - qt.ln());
        }
        let want = want.max(0.0);
        worst_kl = worst_kl.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("KL {got} vs {want}"))?;
        pairs += 1;
    }

    let mut worst_zipf = 0.0f64;
    for i in 0..50 {
        let s = 0.8 + 0.7 * i as f64 / 49.0;
        let counts: Vec<(String, u64)> = (1..=1000).map(|k| (format!("t{k}"), (1e6 * (k as f64).powf(-s)).round() as u64)).collect();
        let table = UnigramTable::from_counts("zipf", counts);
        let f = stats::fit_zipf(&table, 1000).map_err(|e| e.to_string())?;
        worst_zipf = worst_zipf.max(rel(f.exponent_s, s));
        ensure(rel(f.exponent_s, s) < 0.02, || format!("exponent {s}: fitted {}", f.exponent_s))?;
    }

    let mut rolls = 0;
    for _ in 0..500 {
        let n = r.gen_range(1..400);
        let mut pos = 0u64;
        let recs: Vec<TokenLossRecord> = (0..n)
            .map(|_| {
                pos += r.gen_range(1..4);
                TokenLossRecord { position: pos, token: "t".into(), loss_nats: r.gen_range(0.0..12.0) }
            })
            .collect();
        let w = r.gen_range(1..80);
        let got = stats::rolling_loss(&recs, w).map_err(|e| e.to_string())?;
        let (left, right) = ((w - 1) / 2, w / 2);
        for (i, (p, v)) in got.iter().enumerate() {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            let mut sum = 0.0;
            for rec in &recs[lo..=hi] {
                sum += rec.loss_nats;
            }
            let naive = sum / (hi - lo + 1) as f64;
            ensure(*p == recs[i].position && v.to_bits() == naive.to_bits(), || format!("window {w} index {i}: {v} vs {naive}"))?;
        }
        rolls += 1;
    }
    Ok(format!(
        "1000 KL pairs max diff {worst_kl:.1e}; 50 Zipf exponents worst relative error {:.2}%; {rolls} rolling averages bit-exact",
        100.0 * worst_zipf
    ))
}

struct Fixtures {
    natural: Corpus,
    synthetic: Corpus,
    other: Corpus,
}

fn fixtures() -> Fixtures {
    let tok = WordPunctTokenizer;
    Fixtures {
        natural: Corpus::from_texts("nat", common::natural_texts(400, 11), &tok).unwrap(),
        synthetic: Corpus::from_texts("syn", common::synthetic_texts(400, 12), &tok).unwrap(),
        other: Corpus::from_texts("other", common::natural_texts(200, 13), &tok).unwrap(),
    }
}

// 7. Mixture determinism and fraction fidelity.
fn criterion_7() -> Outcome {
    let fx = fixtures();
    let tok = WordPunctTokenizer;
    let all = [&fx.natural, &fx.synthetic, &fx.other];
    let mut r = common::rng(7);
    let mut worst_slack = f64::INFINITY;
    for i in 0..50 {
        let k = r.gen_range(1..=3);
        let mut picked = all.to_vec();
        for j in (1..picked.len()).rev() {
            picked.swap(j, r.gen_range(0..=j));
        }
        picked.truncate(k);
        let raw: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mut fr: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let head: f64 = fr[..k - 1].iter().sum();
        fr[k - 1] = 1.0 - head;
        let cap = picked.iter().zip(&fr).map(|(c, f)| c.handle.total_tokens as f64 / f).fold(f64::INFINITY, f64::min);
        let budget = r.gen_range(1000.0..cap.min(30_000.0) * 0.9) as u64;
        let spec = MixtureSpec::new(picked.iter().zip(&fr).map(|(c, f)| (c.label().to_string(), *f)), r.gen(), budget);
        let m1 = corpus::mix(&spec, &all, &tok).map_err(|e| format!("spec {i}: {e}"))?;
        let m2 = corpus::mix(&spec, &all, &tok).map_err(|e| format!("spec {i}: {e}"))?;
        ensure(m1.output_digest == m2.output_digest && m1 == m2, || format!("spec {i}: runs differ"))?;
        let recomputed = corpus::stream_digest(&m1, &all, &tok).map_err(|e| e.to_string())?;
        ensure(recomputed == m1.output_digest, || format!("spec {i}: digest does not match stream"))?;
        for c in &spec.components {
            let dev = (m1.achieved(&c.label).unwrap_or(0.0) - c.fraction).abs();
            let tol = m1.tolerance();
            ensure(dev <= tol, || format!("spec {i} ({k} components): {} deviates {dev:.4} > tolerance {tol:.4}", c.label))?;
            worst_slack = worst_slack.min(tol - dev);
        }
    }
    Ok(format!("50 random specs reproducible; all fractions within tolerance (min slack {worst_slack:.4})"))
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn check_goldens() -> Result<usize, String> {
    let mut n = 0;
    let mut cmp = |t: &PromptTemplate, chapter: Option<u32>, sys: String, user: String| -> Result<(), String> {
        let (s, u) = synthgen::render_prompt(t, synthgen::SLOT, chapter).map_err(|e| e.to_string())?;
        ensure(s == sys && u == user, || format!("{} {:?} chapter {chapter:?} differs from golden", t.kind, t.audience))?;
        n += 1;
        Ok(())
    };
    for (kind, stem) in [(PromptKind::Hq, "hq"), (PromptKind::Qa, "qa")] {
        cmp(&PromptTemplate::new(kind, None).unwrap(), None, golden(&format!("{stem}.system.txt")), golden(&format!("{stem}.user.txt")))?;
    }
    for a in Audience::ALL {
        let t = PromptTemplate::new(PromptKind::TxbkOutline, Some(a)).unwrap();
        cmp(&t, None, golden(&format!("outline_{a}.system.txt")), golden(&format!("outline_{a}.user.txt")))?;
    }
    let chapter_user = golden("chapter_grade_school_3.user.txt");
    let chapter_sys = golden("chapter_grade_school_3.system.txt");
    for a in Audience::ALL {
        let t = PromptTemplate::new(PromptKind::TxbkChapter, Some(a)).unwrap();
        for c in 1..=10 {
            let user = chapter_user.replace("Chapter 3 ", &format!("Chapter {c} ")).replace("grade school students", a.phrase());
            cmp(&t, Some(c), chapter_sys.clone(), user)?;
        }
    }
    Ok(n)
}

fn generate_config(dir: &Path, source: &Path, url: &str) -> PathBuf {
    let text = format!(
        r#"output_dir = "{out}"

[[corpora]]
label = "src"
path = "{src}"

[generation]
source_corpus = "src"
kinds = ["HQ", "QA"]

[generation.endpoint]
endpoint_url = "{url}"
model_name = "mock-generator"
max_in_flight = 4
retry = {{ max_attempts = 3, backoff_ms = 10 }}
"#,
        out = dir.join("out").display(),
        src = source.display(),
    );
    let path = dir.join("generate.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_generate(config: &Path) -> Result<(), String> {
    let st = Command::new(env!("CARGO_BIN_EXE_synthlab"))
        .args(["generate", "--config"])
        .arg(config)
        .stdout(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure(st.success(), || format!("generate exited with {st}"))
}

fn ledger_jobs(path: &Path) -> Vec<GenerationJob> {
    let mut latest: BTreeMap<String, GenerationJob> = BTreeMap::new();
    for line in std::fs::read_to_string(path).unwrap().lines() {
        if let Ok(j) = serde_json::from_str::<GenerationJob>(line) {
            latest.insert(j.job_id.clone(), j);
        }
    }
    latest.into_values().collect()
}

// 8. Prompts, bounded concurrency, filtering, kill/resume, export round-trip.
fn criterion_8() -> Outcome {
    let goldens = check_goldens()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let source = tmp.path().join("source.jsonl");
    common::write_jsonl(&source, &common::natural_texts(50, 8));
    let server = common::MockServer::start(common::scripted(), Duration::from_millis(15));

    let clean = tmp.path().join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    run_generate(&generate_config(&clean, &source, &server.url))?;
    let clean_requests = server.requests.load(Ordering::SeqCst);
    let mut peak = server.peak();
    server.drain_and_reset_peak();
    ensure(clean_requests == 100, || format!("uninterrupted run made {clean_requests} requests"))?;

    let killed = tmp.path().join("killed");
    std::fs::create_dir_all(&killed).unwrap();
    let cfg = generate_config(&killed, &source, &server.url);
    let mut child = Command::new(env!("CARGO_BIN_EXE_synthlab"))
        .args(["generate", "--config"])
        .arg(&cfg)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(30);
    while server.requests.load(Ordering::SeqCst) < clean_requests + 40 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    child.kill().map_err(|e| e.to_string())?;
    let _ = child.wait();
    peak = peak.max(server.peak());
    // Requests orphaned by the kill still finish server-side; keep them out
    // of the resumed run's concurrency count.
    server.drain_and_reset_peak();
    let ledger = killed.join("out/generation/jobs.jsonl");
    let before = ledger_jobs(&ledger).into_iter().filter(|j| j.status.is_terminal()).count();
    ensure(before > 0 && before < 100, || format!("kill landed after {before} finished jobs"))?;
    let mark = server.requests.load(Ordering::SeqCst);
    run_generate(&cfg)?;
    let resumed_requests = server.requests.load(Ordering::SeqCst) - mark;
    ensure(resumed_requests == 100 - before, || format!("resume made {resumed_requests} requests for {} unfinished jobs", 100 - before))?;
    peak = peak.max(server.peak());
    ensure(peak <= 4, || format!("peak concurrency {peak} > max_in_flight 4"))?;

    let jobs = ledger_jobs(&clean.join("out/generation/jobs.jsonl"));
    ensure(jobs.len() == 100, || format!("{} jobs in ledger", jobs.len()))?;
    let mut filtered = 0;
    for j in &jobs {
        let n = j.output_tokens.ok_or_else(|| format!("{} has no output", j.job_id))?;
        ensure((n < 50) == (j.status == JobStatus::Filtered), || format!("{}: {n} tokens but status {:?}", j.job_id, j.status))?;
        filtered += usize::from(j.status == JobStatus::Filtered);
    }
    ensure(filtered > 0, || "the mock produced no short outputs".into())?;

    let tok = WordPunctTokenizer;
    let mut exported_tokens = 0;
    for kind in ["HQ", "QA"] {
        let a = std::fs::read(clean.join(format!("out/generation/{kind}.jsonl"))).map_err(|e| e.to_string())?;
        let b = std::fs::read(killed.join(format!("out/generation/{kind}.jsonl"))).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{kind} export differs after kill and resume"))?;
        let c = corpus::ingest(&clean.join(format!("out/generation/{kind}.jsonl")), CorpusFormat::Jsonl, kind, &tok).map_err(|e| e.to_string())?;
        let done: Vec<&GenerationJob> = jobs.iter().filter(|j| j.kind.as_str() == kind && j.status == JobStatus::Done).collect();
        let want: u64 = done.iter().map(|j| j.output_tokens.unwrap() as u64).sum();
        ensure(c.handle.total_tokens == want && c.handle.doc_count == done.len() as u64, || {
            format!("{kind}: ingested {} tokens / {} docs, expected {want} / {}", c.handle.total_tokens, c.handle.doc_count, done.len())
        })?;
        ensure(c.documents().iter().all(|d| d.token_count >= 50), || format!("{kind}: short document exported"))?;
        exported_tokens += want;
    }
    Ok(format!(
        "{goldens} prompts match goldens; 100 jobs, peak in-flight {peak}/4, {filtered} short outputs filtered; killed after {before} jobs, resumed with {resumed_requests} requests, exports identical; {exported_tokens} tokens round-trip"
    ))
}

// 9. mix -> train -> fit through the CLI.
fn criterion_9() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    common::write_jsonl(&dir.join("natural.jsonl"), &common::natural_texts(900, 91));
    common::write_jsonl(&dir.join("synthetic.jsonl"), &common::synthetic_texts(700, 92));
    common::write_jsonl(&dir.join("heldout.jsonl"), &common::natural_texts(150, 93));
    let config = dir.join("pipeline.toml");
    std::fs::write(
        &config,
        r#"output_dir = "out"
seed = 9

[[corpora]]
label = "natural"
path = "natural.jsonl"

[[corpora]]
label = "synthetic"
path = "synthetic.jsonl"

[[corpora]]
label = "heldout"
path = "heldout.jsonl"

[[mixtures]]
id = "syn0"
token_budget = 40000
components = [{ label = "natural", fraction = 1.0 }]

[[mixtures]]
id = "syn33"
token_budget = 40000
components = [{ label = "natural", fraction = 0.67 }, { label = "synthetic", fraction = 0.33 }]

[[mixtures]]
id = "syn100"
token_budget = 40000
components = [{ label = "synthetic", fraction = 1.0 }]

[surrogate]
orders = [2]
budgets = [2500, 5000, 10000, 20000, 40000]
eval_corpus = "heldout"

[fit]
form = "data"
"#,
    )
    .unwrap();
    let mut summaries = Vec::new();
    for args in [vec!["mix"], vec!["train"], vec!["fit"]] {
        let mut argv = vec!["synthlab", "--config", config.to_str().unwrap()];
        argv.extend(args);
        summaries.push(cli::run(&Cli::parse_from(&argv)).map_err(|e| format!("{}: {}", argv[3], e.to_json()))?);
    }
    let digest = cli::PipelineConfig::load(&config).map_err(|e| e.to_string())?.digest();
    let out = dir.join("out");
    let fit = &summaries[2];
    let table = fit["irreducible"]["table"].as_array().ok_or("no irreducible table")?;
    ensure(table.len() == 3, || format!("irreducible table has {} rows", table.len()))?;

    let mut artifacts = Vec::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                artifacts.push(p);
            }
        }
    }
    let svgs = artifacts.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).count();
    ensure(svgs == 4, || format!("{svgs} SVGs emitted"))?;
    let mut stamped = 0;
    for p in &artifacts {
        // Mixed document dumps stay plain jsonl; their manifests carry the stamp.
        if p.extension().is_some_and(|e| e == "jsonl") {
            continue;
        }
        let text = std::fs::read_to_string(p).map_err(|e| e.to_string())?;
        ensure(text.contains(&digest), || format!("{} lacks config digest", p.display()))?;
        stamped += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    let rows: Vec<String> = table.iter().map(|r| format!("{}={:.3}", r["mixture_id"].as_str().unwrap_or("?"), r["E"].as_f64().unwrap_or(f64::NAN))).collect();
    Ok(format!("3 mixtures x 5 budgets, {svgs} SVGs, {stamped} stamped artifacts share digest {}…; E: {}; {secs:.1}s", &digest[..12], rows.join(" ")))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let failures = Mutex::new(0);
    for (n, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match res {
            Ok(detail) => println!("criterion {n}: PASS ({:.1}s) {detail}", t.elapsed().as_secs_f64()),
            Err(why) => {
                *failures.lock().unwrap() += 1;
                println!("criterion {n}: FAIL ({:.1}s) {why}", t.elapsed().as_secs_f64());
            }
        }
    }
    let failed = *failures.lock().unwrap();
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
