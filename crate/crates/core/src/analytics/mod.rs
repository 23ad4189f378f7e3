//! Debug-log persistence and the descriptive and inferential analyses run
//! over it.

pub mod ablation;
pub mod corpus;
pub mod records;
pub mod rubrics;
pub mod stats;
pub mod tables;
