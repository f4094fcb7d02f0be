//! Pipeline for building and applying an image classifier of pro-eating-disorder
//! content, and for measuring its prevalence over time.

pub mod dataset;
pub mod dedup;
pub mod evaluation;
pub mod ingest;
pub mod io;
pub mod sampling;
pub mod training;
pub mod trend;
