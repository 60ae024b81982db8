//! Joint named-entity recognition and relation extraction with a
//! relation-metric table-filling network, built from scratch: tensors with
//! reverse-mode autodiff, a BILOU tag-table codec, a char-CNN + Bi-LSTM
//! context encoder, the bilinear-metric convolution-pooling core, corpus
//! ingestion, and a training/evaluation harness.

pub mod checkpoint;
pub mod codec;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod inspect;
pub mod model;
pub mod net;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
