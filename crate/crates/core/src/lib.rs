pub mod config;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod mil;
pub mod model;
pub mod pipeline;
pub mod serve;
pub mod shots;
