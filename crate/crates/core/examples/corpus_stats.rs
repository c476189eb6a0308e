//! Zipf fit, KL divergence and coverage gaps between two corpora.

mod shared;

use synthlab::stats::{self, UnigramTable};
use synthlab::tokenizer::{Tokenizer, WordPunctTokenizer};

fn table(label: &str, docs: &[(String, String)]) -> UnigramTable {
    let tok = WordPunctTokenizer;
    let shards: Vec<Vec<String>> = docs.iter().map(|(_, t)| tok.pieces(t)).collect();
    stats::count_unigrams_sharded(label, &shards).expect("non-empty")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let web = table("web", &shared::prose(500, 3));
    let qa = table("qa", &shared::rephrased(500, 4));

    let z = stats::fit_zipf(&web, 100)?;
    println!("web zipf s={:.3} r2={:.3}", z.exponent_s, z.r_squared);

    for (p, q) in [(&web, &qa), (&qa, &web)] {
        let d = stats::kl_divergence(p, q, stats::DEFAULT_KL_EPS)?;
        println!("KL({} || {}) = {:.4} nats over {} types", d.test_label, d.train_label, d.kl_nats, d.union_vocab);
    }

    let gaps = stats::coverage_gaps(&web, &qa, 1e-3, 1e-4)?;
    println!("{} web tokens are missing from qa; worst:", gaps.len());
    for g in gaps.iter().take(5) {
        println!("  {:<6} test {:.2e} train {:.2e}", g.token, g.test_frequency, g.train_frequency);
    }
    Ok(())
}
