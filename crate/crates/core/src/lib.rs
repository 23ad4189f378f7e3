//! Evidence-fusion engine for multi-source audio question answering.

pub mod analytics;
pub mod argumentation;
pub mod backends;
pub mod clock;
pub mod config;
pub mod contradiction;
pub mod evidence;
pub mod exec;
pub mod intake;
pub mod pipeline;
pub mod prompts;
pub mod sample;
pub mod serde_util;
pub mod text;
pub mod tools;
pub mod unified;
pub mod verification;
