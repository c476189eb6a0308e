//! Toy text sources for the examples.
#![allow(dead_code)]

use synthlab::rng::CounterRng;

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "pi", "da", "go", "fu", "be", "zi", "ho", "we"];

fn word(i: usize) -> String {
    format!("{}{}", SYLLABLES[i % 16], SYLLABLES[(i / 16) % 16])
}

/// First-order chain over 256 words with Zipf-distributed successors.
pub fn prose(n_docs: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = CounterRng::new(seed);
    (0..n_docs)
        .map(|d| {
            let len = 40 + rng.below(80) as usize;
            let mut text = String::new();
            let mut prev = rng.below(256) as usize;
            for k in 0..len {
                let rank = (256f64.powf(rng.next_f64()) - 1.0) as usize;
                prev = (prev * 7 + rank) % 256;
                text.push_str(&word(prev));
                text.push_str(if k % 12 == 11 { ". " } else { " " });
            }
            (format!("nat-{d:04}"), text.trim_end().to_string() + ".")
        })
        .collect()
}

/// Formulaic question/answer text over a narrow vocabulary.
pub fn rephrased(n_docs: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = CounterRng::new(seed);
    (0..n_docs)
        .map(|d| {
            let topic = word(rng.below(32) as usize);
            let fact = word(rng.below(32) as usize + 32);
            let text = format!("Question: what is {topic}? Answer: {topic} is {fact}. Question: why {fact}? Answer: because {topic} is {fact}.");
            (format!("syn-{d:04}"), text)
        })
        .collect()
}

pub fn write_jsonl(path: &std::path::Path, docs: &[(String, String)]) {
    let body: String = docs.iter().map(|(id, text)| serde_json::json!({ "id": id, "text": text }).to_string() + "\n").collect();
    std::fs::write(path, body).expect("write corpus");
}
