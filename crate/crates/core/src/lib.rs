//! Corpus handling, the masked-autoencoder model, training loops and
//! evaluation metrics.

pub mod corpus;
pub mod model;
pub mod train;
pub mod eval;
