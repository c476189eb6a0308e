mod common;

use std::path::Path;
use std::process::Command;

use clap::Parser;
use serde_json::Value;
use synthlab::cli::{self, Cli};

fn run_in(config: &Path, args: &[&str]) -> Result<Value, cli::CliError> {
    let mut argv = vec!["synthlab", "--config", config.to_str().unwrap()];
    argv.extend(args);
    cli::run(&Cli::parse_from(&argv))
}

fn bin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_synthlab")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn two_corpora(dir: &Path, extra: &str) -> std::path::PathBuf {
    common::write_jsonl(&dir.join("nat.jsonl"), &common::natural_texts(60, 1));
    common::write_jsonl(&dir.join("syn.jsonl"), &common::synthetic_texts(60, 2));
    let cfg = dir.join("pipeline.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"output_dir = "out"
[[corpora]]
label = "nat"
path = "nat.jsonl"

[[corpora]]
label = "syn"
path = "syn.jsonl"

[[mixtures]]
id = "half"
token_budget = 2000
components = [{{ label = "nat", fraction = 0.5 }}, {{ label = "syn", fraction = 0.5 }}]
{extra}"#
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn dry_run_validates_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_corpora(tmp.path(), "");
    let v = run_in(&cfg, &["--dry-run", "mix"]).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["mixtures"][0], "half");
    assert!(!tmp.path().join("out").exists());
    run_in(&cfg, &["mix"]).unwrap();
    assert!(tmp.path().join("out").exists());
}

#[test]
fn binary_reports_all_violations_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        r#"tokenizer = "nope"
[[mixtures]]
id = "m"
token_budget = 100
components = [{ label = "missing", fraction = 0.6 }]
"#,
    )
    .unwrap();
    let (code, stdout, stderr) = bin(&["--config", cfg.to_str().unwrap(), "mix"]);
    assert_eq!(code, 2);
    assert!(stdout.is_empty());
    let err: Value = serde_json::from_str(&stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["violations"].as_array().unwrap().len() >= 3, "{stderr}");

    let (code, _, stderr) = bin(&["no-such-command"]);
    assert_eq!(code, 2);
    assert_eq!(serde_json::from_str::<Value>(&stderr).unwrap()["error"]["kind"], "usage");

    let good = two_corpora(tmp.path(), "");
    let (code, stdout, _) = bin(&["--config", good.to_str().unwrap(), "ingest"]);
    assert_eq!(code, 0);
    assert_eq!(serde_json::from_str::<Value>(&stdout).unwrap()["corpora"].as_array().map(Vec::len), Some(2));
}

#[test]
fn search_heatmap_matches_sweep_and_report_regenerates() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Planted argmins: 10% for hq, 50% for qa, with one missing point.
    let mut sweep = String::from("# planted\nsynthetic_label,n,d,ratio,loss\n");
    for (label, best) in [("hq", 0.1f64), ("qa", 0.5)] {
        for n in [1, 2] {
            for r in [0.0, 0.1, 0.2, 0.5] {
                if label == "qa" && n == 2 && r == 0.0 {
                    continue;
                }
                sweep.push_str(&format!("{label},{n},1000,{r},{}\n", 2.0 + (r - best).abs() + 0.01 * n as f64));
            }
        }
    }
    std::fs::write(dir.join("sweep.csv"), sweep).unwrap();
    let cfg = two_corpora(
        dir,
        r#"
[sweep]
natural = "nat"
synthetic = ["hq", "qa"]
ratios = [0.0, 0.1, 0.2, 0.5]
capacities = [1, 2]
budgets = [1000]
evaluator = { type = "replay", path = "sweep.csv" }
"#,
    );
    let v = run_in(&cfg, &["search"]).unwrap();
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    for c in cells {
        let want = if c["synthetic_label"] == "hq" { 0.1 } else { 0.5 };
        assert_eq!(c["best_ratio"].as_f64(), Some(want));
    }
    assert_eq!(cells.iter().map(|c| c["failures"].as_u64().unwrap()).sum::<u64>(), 1);

    let heat_csv = dir.join("out/search/ratio_heatmap.csv");
    let text = std::fs::read_to_string(&heat_csv).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let want = if &rec[0] == "hq" { "10.00" } else { "50.00" };
        assert_eq!(&rec[3], want);
    }

    // Regenerating from the emitted CSV reproduces both files byte for byte.
    let r = run_in(&cfg, &["report", "--kind", "ratio_heatmap", "--in", heat_csv.to_str().unwrap()]).unwrap();
    assert_eq!(std::fs::read(r["csv"].as_str().unwrap()).unwrap(), text.as_bytes());
    assert_eq!(std::fs::read(r["svg"].as_str().unwrap()).unwrap(), std::fs::read(dir.join("out/search/ratio_heatmap.svg")).unwrap());

    // The raw sweep gives the same argmins.
    let raw = run_in(&cfg, &["report", "--kind", "ratio_heatmap", "--in", dir.join("out/search/sweep.csv").to_str().unwrap()]).unwrap();
    let regen = std::fs::read_to_string(raw["csv"].as_str().unwrap()).unwrap();
    assert_eq!(regen.lines().skip(1).collect::<Vec<_>>(), text.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn stats_outputs_agree_with_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let losses: Vec<String> = (0..300).map(|i| format!("{{\"position\":{i},\"token\":\"t\",\"loss\":{}}}", 1.0 + (i % 7) as f64 * 0.1)).collect();
    std::fs::write(dir.join("run.jsonl"), losses.join("\n") + "\n").unwrap();
    let cfg = two_corpora(
        dir,
        r#"
[stats]
pairs = [["nat", "syn"]]
loss_logs = ["run.jsonl"]
window = 7
zipf_top_k = 100
"#,
    );
    let v = run_in(&cfg, &["stats"]).unwrap();
    assert!(v["zipf"]["nat"]["exponent_s"].as_f64().is_some_and(|s| s > 0.0), "{}", v["zipf"]);
    let kl = v["kl"][0]["kl_nats"].as_f64().unwrap();
    assert!(kl > 0.0);
    let bar = std::fs::read_to_string(dir.join("out/stats/kl_bar.csv")).unwrap();
    let row = bar.lines().find(|l| l.starts_with("nat,")).unwrap();
    let shown: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((shown - kl).abs() <= 1e-4 * kl);
    assert!(dir.join("out/stats/gaps_nat_syn.csv").exists());
    // Every full centred window of a period-7 signal has the same mean.
    let tl = std::fs::read_to_string(dir.join("out/stats/token_loss.csv")).unwrap();
    let vals: Vec<f64> = tl.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 300);
    assert!(vals[3..297].iter().all(|x| (x - 1.3).abs() < 1e-4), "{vals:?}");
    for s in v["reports"].as_array().unwrap() {
        assert!(Path::new(s["figure_svg_path"].as_str().unwrap()).exists());
    }
}
