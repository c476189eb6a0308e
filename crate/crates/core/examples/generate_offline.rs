//! Run the generation sweep against an in-process endpoint and export
//! the surviving outputs as a corpus.

mod shared;

use synthlab::synthgen::{self, Audience, ChatRequest, EndpointError, FilterSet, GenerationConfig, GenerationTask, JobStatus, JobStore, PromptKind};
use synthlab::tokenizer::WordPunctTokenizer;

/// Echoes a slice of the prompt back; every fifth reply is too short.
fn echo(req: &ChatRequest) -> Result<String, EndpointError> {
    let user = &req.messages[1].content;
    let words: Vec<&str> = user.split_whitespace().collect();
    let n = if user.len().is_multiple_of(5) { 12 } else { 400 };
    Ok(words.iter().cycle().take(n).copied().collect::<Vec<_>>().join(" "))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = GenerationConfig { model_name: "echo".into(), max_in_flight: 4, ..GenerationConfig::default() };
    let tok = WordPunctTokenizer;
    let docs = shared::prose(20, 11);
    let mut tasks: Vec<GenerationTask> = docs
        .iter()
        .flat_map(|(id, text)| {
            [PromptKind::Hq, PromptKind::Qa].map(|kind| GenerationTask::Rephrase { doc_id: id.clone(), text: text.clone(), kind })
        })
        .collect();
    tasks.push(GenerationTask::Textbook { doc_id: docs[0].0.clone(), text: docs[0].1.clone(), audience: Audience::GradeSchool });

    let store = JobStore::open(&dir.path().join("jobs.jsonl"))?;
    let report = synthgen::run_sweep(&tasks, &cfg, &FilterSet::default(), &echo, &tok, Some(&store), None)?;
    let count = |s: JobStatus| report.jobs.iter().filter(|j| j.status == s).count();
    println!("{} jobs: {} done, {} filtered, {} failed", report.jobs.len(), count(JobStatus::Done), count(JobStatus::Filtered), count(JobStatus::Failed));
    for b in &report.books {
        println!("book {} accepted={} chapters={}", b.book_id, b.accepted, b.jobs.len() - 1);
    }

    let handle = synthgen::export(&report.jobs, &dir.path().join("synthetic.jsonl"), &cfg, &tok)?;
    println!("exported {} docs, {} tokens", handle.doc_count, handle.total_tokens);

    // A second run finds everything in the ledger.
    let resumed = synthgen::run_sweep(&tasks, &cfg, &FilterSet::default(), &echo, &tok, Some(&store), None)?;
    assert_eq!(resumed.jobs, report.jobs);
    Ok(())
}
