//! # onenet
//!
//! A joint spoken-language-understanding model: one orthography-sensitive
//! BiLSTM encoder shared by a domain classifier, an intent classifier and a
//! CRF slot tagger, trained on the summed loss under a staged curriculum.
//!
//! The crate also carries everything needed to compare the joint model with
//! its non-joint baselines:
//!
//! - [`graph`]: a small reverse-mode autodiff engine over `f64` vectors, with
//!   [`gradcheck`] for finite-difference verification.
//! - [`embedding`], [`encoder`], [`heads`]: the network layers.
//! - [`trainer`]: Adam, the joint loss and the curriculum schedule.
//! - [`data`]: corpus I/O, BIO validation, vocabularies and a seeded
//!   synthetic multi-domain corpus generator.
//! - [`eval`]: chunk F1, accuracies, the Independent / Pipeline /
//!   OracleDomain / Joint variants and per-domain breakdowns.
//! - [`cli`]: the `onenet` command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod crf;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod lstm;
pub mod model;
pub mod params;
pub mod trainer;
pub mod vocab;

pub use crate::crf::{CrfScoreMode, CrfScores};
pub use crate::data::{CorpusSchema, Example};
pub use crate::error::{Error, Result};
pub use crate::eval::{EvalReport, Variant};
pub use crate::graph::{Graph, NodeId};
pub use crate::heads::TagSet;
pub use crate::model::{ModelConfig, ModelDims, OneNet, Prediction};
pub use crate::params::{Gradients, ParamId, ParameterStore, Partition};
pub use crate::trainer::{CurriculumStage, Hyperparams};
