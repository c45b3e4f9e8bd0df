pub mod acceptability;
pub mod cli;
pub mod nn;
pub mod pseudo_label;
pub mod segmentation;
pub mod service;
pub mod summarizer;
pub mod synthetic;
pub mod sumsim;
pub mod transcript;
pub mod util;
