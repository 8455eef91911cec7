//! Three-stage transfer learning for end-to-end speech summarization.
//!
//! A speech recognizer and a denoising text model are pre-trained, then
//! fine-tuned into a speech summarizer and a text summarizer. Their encoder
//! and decoder are transplanted into one model and fine-tuned again.
//! [`pipeline::Runner`] drives the whole workflow on a synthetic corpus.

pub mod compute;
pub mod data;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod training;
pub mod transfer;
