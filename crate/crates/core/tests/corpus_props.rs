mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use synthlab::corpus::{self, Corpus, MixtureSpec};
use synthlab::rng::PRNG_ID;
use synthlab::tokenizer::{Tokenizer, WordPunctTokenizer, DOC_SEPARATOR};

fn corpora() -> (Corpus, Corpus) {
    let tok = WordPunctTokenizer;
    (
        Corpus::from_texts("nat", common::natural_texts(150, 1), &tok).unwrap(),
        Corpus::from_texts("syn", common::synthetic_texts(150, 2), &tok).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mix_invariants(frac in 0.0f64..=1.0, seed in any::<u64>(), budget in 200u64..8000) {
        let (nat, syn) = corpora();
        let tok = WordPunctTokenizer;
        let refs = [&nat, &syn];
        let spec = MixtureSpec::binary("nat", "syn", frac, seed, budget);
        let m = corpus::mix(&spec, &refs, &tok).unwrap();

        // determinism
        prop_assert_eq!(&corpus::mix(&spec, &refs, &tok).unwrap(), &m);
        prop_assert_eq!(&m.prng_id, PRNG_ID);

        // fidelity
        for c in &spec.components {
            prop_assert!((m.achieved(&c.label).unwrap() - c.fraction).abs() <= m.tolerance());
        }

        // conservation
        let stream: Vec<_> = corpus::token_stream(&m, &refs, &tok).unwrap().collect();
        let sel_sum: u64 = m.selected_doc_ids.iter().map(|s| s.tokens).sum();
        let doc_sum: u64 = m.order.iter().map(|r| refs.iter().find(|c| c.label() == r.label).unwrap().get(&r.id).unwrap().token_count).sum();
        prop_assert_eq!(stream.len() as u64, m.total_tokens);
        prop_assert_eq!(sel_sum, m.total_tokens);
        prop_assert_eq!(doc_sum, m.total_tokens);
        prop_assert!(!stream.contains(&DOC_SEPARATOR));

        // no duplicates
        for s in &m.selected_doc_ids {
            let uniq: HashSet<_> = s.doc_ids.iter().collect();
            prop_assert_eq!(uniq.len(), s.doc_ids.len());
        }
    }

    #[test]
    fn larger_budgets_extend_selection(seed in any::<u64>(), budget in 200u64..4000) {
        let (nat, syn) = corpora();
        let tok = WordPunctTokenizer;
        let refs = [&nat, &syn];
        let small = corpus::mix(&MixtureSpec::binary("nat", "syn", 0.3, seed, budget), &refs, &tok).unwrap();
        let large = corpus::mix(&MixtureSpec::binary("nat", "syn", 0.3, seed, budget * 2), &refs, &tok).unwrap();
        for (a, b) in small.selected_doc_ids.iter().zip(&large.selected_doc_ids) {
            prop_assert!(b.doc_ids.starts_with(&a.doc_ids));
        }
    }
}

#[test]
fn separated_stream_marks_every_document() {
    let (nat, syn) = corpora();
    let tok = WordPunctTokenizer;
    let refs = [&nat, &syn];
    let m = corpus::mix(&MixtureSpec::binary("nat", "syn", 0.5, 3, 3000), &refs, &tok).unwrap();
    let sep: Vec<_> = corpus::token_stream(&m, &refs, &tok).unwrap().with_separators().collect();
    assert_eq!(sep.iter().filter(|t| **t == DOC_SEPARATOR).count(), m.order.len());
    assert_eq!(sep.len() as u64, m.total_tokens + m.order.len() as u64);
    assert_eq!(*sep.last().unwrap(), DOC_SEPARATOR);
}

#[test]
fn manifest_json_round_trip() {
    let (nat, syn) = corpora();
    let tok = WordPunctTokenizer;
    let m = corpus::mix(&MixtureSpec::binary("nat", "syn", 0.25, 9, 2000), &[&nat, &syn], &tok).unwrap();
    let back = corpus::MixtureManifest::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.tokenizer_id, tok.id());
}

#[test]
fn ingest_counts_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    std::fs::write(&p, "{\"id\":\"a\",\"text\":\"one two.\"}\nnot json\n{\"id\":\"a\",\"text\":\"dup\"}\n{\"id\":\"b\",\"text\":\"  \"}\n{\"text\":\"no id here\"}\n").unwrap();
    let c = corpus::ingest(&p, corpus::CorpusFormat::Jsonl, "c", &WordPunctTokenizer).unwrap();
    assert!(c.handle.doc_count >= 1);
    assert!(c.handle.malformed_records >= 3);
    assert_eq!(c.get("a").unwrap().token_count, 3);
}

#[test]
fn plain_text_directory_ingest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.txt"), "Alpha beta, gamma!").unwrap();
    std::fs::write(dir.path().join("y.txt"), "delta").unwrap();
    let c = corpus::ingest(dir.path(), corpus::CorpusFormat::PlainTextPerFile, "txt", &WordPunctTokenizer).unwrap();
    assert_eq!(c.handle.doc_count, 2);
    assert_eq!(c.handle.total_tokens, 6);
}
