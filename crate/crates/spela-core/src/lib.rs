pub mod bp;
pub mod cnn;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod profiler;
pub mod rng;
