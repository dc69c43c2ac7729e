pub mod config;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod report;
pub mod sim;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
