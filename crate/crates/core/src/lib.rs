//! Hierarchical long-term conversational memory.
//!
//! Facts are extracted from multi-session dialogue, grouped by a capped
//! Gaussian-mixture clustering over reduced embeddings, and summarized
//! recursively into a [`tree::MemoryTree`]. Queries descend the tree level by
//! level, asking a judge model which summaries are relevant and pruning the
//! subtrees it rejects.
//!
//! The [`corpus`] module generates evaluation corpora with implicit evidence
//! and [`eval`] scores retrieval strategies against them.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod extract;
pub mod gateway;
pub mod model;
pub mod retrieve;
pub mod text;
pub mod tree;

pub use gateway::{Gateway, GatewayError, Role};
pub use model::{BuildConfig, ConversationHistory, EmbeddingVector, Fact, Session, Utterance};
pub use retrieve::{brute_force_retrieve, retrieve, RetrievalConfig, RetrievalResult};
pub use tree::{build_tree, MemoryTree, TreeNode};
