//! Train n-gram surrogates at growing budgets and print held-out loss.

mod shared;

use synthlab::corpus::{Corpus, MixtureSpec};
use synthlab::surrogate::{self, Capacity, CurveMixture};
use synthlab::tokenizer::{TokenId, Tokenizer, WordPunctTokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = WordPunctTokenizer;
    let nat = Corpus::from_texts("web", shared::prose(1500, 5), &tok)?;
    let syn = Corpus::from_texts("qa", shared::rephrased(1500, 6), &tok)?;
    let eval: Vec<TokenId> = shared::prose(100, 7).iter().flat_map(|(_, t)| tok.ids(t)).collect();

    let mixtures: Vec<CurveMixture> = [0.0, 0.3]
        .iter()
        .map(|&r| CurveMixture { id: format!("syn{}", (r * 100.0) as u32), spec: MixtureSpec::binary("web", "qa", r, 0, 1) })
        .collect();
    let caps = [Capacity { order: 2, prune_min_count: 1 }, Capacity { order: 3, prune_min_count: 2 }];
    let recs = surrogate::run_curve(&mixtures, &[5_000, 10_000, 20_000, 40_000], &caps, &[&nat, &syn], &tok, &eval)?;

    println!("{:<7} {:>10} {:>8} {:>8}", "mixture", "params", "D", "loss");
    for r in &recs {
        println!("{:<7} {:>10} {:>8} {:>8.4}", r.mixture_id, r.n_params, r.d_tokens, r.loss_nats);
    }
    Ok(())
}
