//! Frozen-feature probe pipeline for synthetic image detection.
//!
//! A small linear head is trained on precomputed [CLS] features, its
//! probability is written into the user turn of a conversation as a fixed
//! sentence, and the answers of a chat model that sees that sentence are
//! scored for detection accuracy and explanation quality.
//!
//! * [`feature_store`]: NPY feature matrices, NDJSON manifests, joins.
//! * [`linear_head`]: forward pass, BCE, backprop, Adam training, prediction.
//! * [`prompt_injection`]: the classifier sentence and dataset augmentation.
//! * [`evaluation`]: verdict parsing, Acc/F1, ROUGE-L, cosine similarity.
//! * [`orchestrator`]: chat backends and the inference run.

pub mod evaluation;
pub mod feature_store;
pub mod linear_head;
pub mod orchestrator;
pub mod prompt_injection;
pub mod rng;

mod par;

pub use par::compensated_sum;
