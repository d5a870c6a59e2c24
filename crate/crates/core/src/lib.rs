pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod fpk;
pub mod grid;
pub mod hjb;
pub mod linalg;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
