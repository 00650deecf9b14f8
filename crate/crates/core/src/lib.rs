//! Data curation and adaptive sampling for mixed real/generated robot
//! demonstration datasets.
//!
//! Generated episodes are screened by depth, multi-view and prompt-alignment
//! quality checks; every retained episode is scored from policy predictions
//! and kinematics; a seeded two-phase sampler then emits a batch plan that
//! favors poorly handled samples once training is under way.

pub mod behavior;
pub mod checksum;
pub mod config;
pub mod data;
pub mod metrics;
pub mod pipeline;
pub mod quality;
pub mod sampler;
