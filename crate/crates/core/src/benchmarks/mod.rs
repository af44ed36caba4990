//! Synthetic workloads and the experiment drivers built on them.

pub mod dynamics;
pub mod gaussian_task;
pub mod rate;
pub mod experiments;
