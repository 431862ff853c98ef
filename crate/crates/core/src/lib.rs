//! Frozen-oracle rationales plus parameter-efficient tuning of a small
//! byte-level language model.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: tensors, reverse-mode tape, Adam.
//! - [`toylm`]: byte tokenizer, decoder-only transformer, greedy decoding.
//! - [`peft`]: LoRA adapters, adapted forward and merge.
//! - [`prompting`]: instruction sets and prompt rendering.
//! - [`oracle`]: the frozen big model behind HTTP or mock backends, with a
//!   persistent response cache.
//! - [`evalkit`]: datasets, metrics and reports.
//! - [`pipeline`]: model building, two-stage inference, baselines and the
//!   ablation suite.
//! - [`cli`]: the `fiat` command line.

pub mod cli;
pub mod evalkit;
pub mod numcore;
pub mod oracle;
pub mod peft;
pub mod pipeline;
pub mod prompting;
pub mod toylm;
