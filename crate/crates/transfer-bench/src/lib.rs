//! A self-contained laboratory for studying how adversarial examples crafted
//! on one network-security classifier carry over to another.
//!
//! The crate trains small CNN and LSTM binary classifiers on 64x64 grayscale
//! "patches" (encoded tabular traffic records, domain-name strings, or
//! synthetic data), crafts adversarial examples with five evasion attacks
//! (I-FGSM, JSMA, L-BFGS, PGD, DeepFool), measures how often those examples
//! also fool an independently trained target network across three mismatch
//! scenarios, and evaluates two defenses (fine-tuning on the most powerful
//! attacks, and a CNN-to-LSTM architecture switch).
//!
//! Start with the runnable examples (`cargo run --release --example ...`) or
//! the `transfer-bench` binary; the library surface mirrors the module list
//! below.

pub mod attack;
pub(crate) mod container;
pub mod cli;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
