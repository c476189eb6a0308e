//! Grid search over synthetic ratios with a surrogate evaluator and a
//! checkpoint that makes re-runs free.

mod shared;

use synthlab::corpus::Corpus;
use synthlab::mixsearch::{self, CellSpec, RatioGrid, SearchConfig, SurrogateEvaluator};
use synthlab::tokenizer::{Tokenizer, WordPunctTokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = WordPunctTokenizer;
    let nat = Corpus::from_texts("web", shared::prose(1200, 8), &tok)?;
    let syn = Corpus::from_texts("qa", shared::rephrased(1200, 9), &tok)?;
    let eval_stream = shared::prose(80, 10).iter().flat_map(|(_, t)| tok.ids(t)).collect();
    let evaluator = SurrogateEvaluator { corpora: vec![&nat, &syn], tokenizer: &tok, eval_stream, prune_min_count: 1 };

    let dir = tempfile::tempdir()?;
    let mut cfg = SearchConfig::new("web", 0);
    cfg.checkpoint = Some(dir.path().join("checkpoint.jsonl"));
    cfg.parallelism = 4;
    let grid = RatioGrid::fine_grained();
    let cells = [CellSpec::new("qa", 2, 10_000), CellSpec::new("qa", 3, 20_000)];

    let out = mixsearch::run_grid(&grid, &cells, &evaluator, &cfg)?;
    for c in &out.cells {
        print!("order {} D={:>6}:", c.n_capacity, c.d_budget);
        for &r in grid.ratios() {
            print!(" {:.3}", c.loss_at(r).unwrap_or(f64::NAN));
        }
        println!("  best {:?}", c.best_ratio);
    }
    let again = mixsearch::run_grid(&grid, &cells, &evaluator, &cfg)?;
    println!("rerun: {} reused, {} evaluated", again.reused, again.evaluated);
    Ok(())
}
