//! Data augmentation engine for low-resource named-entity corpora.
//!
//! Sentences are linearized into a bracketed form, masked by five
//! operations composed into four strategies, refilled by a pluggable
//! generation backend, filtered for type consistency, and paired for
//! hidden-state mixup during tagger training.

pub mod augment;
pub mod corpus;
pub mod eval;
pub mod filter;
pub mod flip;
pub mod linearize;
pub mod gateway;
pub mod masking;
pub mod mixup;
pub mod pipeline;
pub mod rng;
pub mod strategy;
pub mod tagger;
