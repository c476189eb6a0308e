//! Drive the CLI in-process: mix, train, fit, stats and search from one
//! config file.

mod shared;

use clap::Parser;
use synthlab::cli::{self, Cli};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    shared::write_jsonl(&dir.path().join("web.jsonl"), &shared::prose(1200, 12));
    shared::write_jsonl(&dir.path().join("qa.jsonl"), &shared::rephrased(1200, 13));
    shared::write_jsonl(&dir.path().join("heldout.jsonl"), &shared::prose(100, 14));
    let config = dir.path().join("pipeline.toml");
    std::fs::write(&config, include_str!("configs/pipeline.toml"))?;
    let config = config.to_str().unwrap();

    for cmd in ["mix", "train", "fit", "stats", "search"] {
        let summary = cli::run(&Cli::parse_from(["synthlab", "--config", config, cmd])).map_err(|e| e.to_json().to_string())?;
        let keys: Vec<&String> = summary.as_object().map(|m| m.keys().collect()).unwrap_or_default();
        println!("{cmd}: {keys:?}");
        if cmd == "fit" {
            println!("  {}", summary["irreducible"]["table"]);
        }
    }
    let mut files: Vec<_> = walk(&dir.path().join("out"));
    files.sort();
    println!("{} artifacts; figures:", files.len());
    for f in files.iter().filter(|f| f.ends_with(".svg")) {
        println!("  {f}");
    }
    Ok(())
}

fn walk(p: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(p).into_iter().flatten().flatten() {
        let path = e.path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path.display().to_string());
        }
    }
    out
}
