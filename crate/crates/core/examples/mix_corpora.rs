//! Build a 30% synthetic mixture and print its manifest summary.

mod shared;

use synthlab::corpus::{self, Corpus, MixtureSpec};
use synthlab::tokenizer::WordPunctTokenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = WordPunctTokenizer;
    let nat = Corpus::from_texts("web", shared::prose(400, 1), &tok)?;
    let syn = Corpus::from_texts("qa", shared::rephrased(400, 2), &tok)?;
    let spec = MixtureSpec::binary("web", "qa", 0.3, 42, 20_000);
    let m = corpus::mix(&spec, &[&nat, &syn], &tok)?;

    println!("total tokens {}  tolerance {:.4}", m.total_tokens, m.tolerance());
    for a in &m.achieved_fractions {
        println!("  {:<4} requested {:.3} achieved {:.4}", a.label, spec.fraction_of(&a.label), a.fraction);
    }
    println!("digest {}", m.output_digest);

    // Same spec, same stream.
    let again = corpus::mix(&spec, &[&nat, &syn], &tok)?;
    assert_eq!(again.output_digest, m.output_digest);
    let first: Vec<_> = m.order.iter().take(5).map(|d| format!("{}:{}", d.label, d.id)).collect();
    println!("first docs {}", first.join(" "));
    Ok(())
}
