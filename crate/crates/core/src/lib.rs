//! Probing language models for implicit causality bias.

pub mod biasmetrics;
pub mod congruency;
pub mod lexicon;
pub mod repprobe;
pub mod rng;
pub mod scorer;
pub mod stats;
pub mod stimgen;
