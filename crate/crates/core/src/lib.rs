pub mod corpus;
pub mod rng;
pub mod stats;
pub mod tokenizer;
pub mod scaling;
pub mod surrogate;
pub mod mixsearch;
pub mod synthgen;
pub mod report;
pub mod cli;
