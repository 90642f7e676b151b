pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod pose;
pub mod rewards;
pub mod trainer;
