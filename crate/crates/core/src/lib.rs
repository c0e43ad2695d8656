pub mod cli;
pub mod config;
pub mod error;
pub mod game;
pub mod policies;
pub mod report;
pub mod rng;
pub mod sac;
pub mod task_env;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
