//! Automated pancreas surface lobularity (PSL), abdominal CT biomarkers,
//! segmentation agreement metrics and logistic-regression screening models
//! for type 2 diabetes, with synthetic phantoms for ground truth.

pub mod grid;
pub mod lobularity;
pub mod maskops;
pub mod phantom;
pub mod schema;
pub mod screening;
pub mod segmetrics;
pub mod stats;
pub mod volio;

pub use grid::{BinaryMask, Grid, LabelMask, Orientation, Volume};
pub use schema::{LabelSchema, Structure};
