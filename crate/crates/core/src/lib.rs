//! Layout-aware encoder-decoder for abstractive question answering over
//! document images.
//!
//! A question and a document's OCR regions are serialized into one token
//! sequence; each token is embedded with its region class, bounding box and
//! region appearance features. A transformer encoder-decoder generates the
//! answer, and a saliency head on the encoder scores which OCR tokens are
//! relevant. Both are trained jointly.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod embedder;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod serializer;
pub mod synth;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
mod testutil;
