//! Zero-shot dense retrieval for RAG over three granularities of indexed text:
//! whole chunks, atoms (sentences or generated facts), and synthetic questions
//! generated per atom. Includes diversity pruning of question sets and an
//! evaluation harness (R@K, nDCG@K, nAUC).

pub mod atomizer;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod generation;
pub mod index;
pub mod jsonl;
pub mod pipeline;
pub mod questions;
pub mod text;

mod parallel;

pub use error::{Error, Result};
