//! Data pipeline and classical models for daily extreme-move prediction on BTC.
//!
//! Modules follow the pipeline order: [`market_data`] loads and aligns prices,
//! [`indicators`] and [`features`] build the normalized feature windows and
//! labels, [`svm`] trains the technical-analysis classifier, [`embeddings_io`]
//! reads precomputed tweet embeddings, [`fusion_eval`] combines and scores
//! model outputs, and [`backtest`] turns signals into trading statistics.

pub mod backtest;
pub mod embeddings_io;
pub mod features;
pub mod fusion_eval;
pub mod indicators;
pub mod market_data;
pub mod svm;
