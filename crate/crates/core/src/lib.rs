mod error;
pub mod cbam;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod kagn;
pub mod nn;
pub mod params;
pub mod pose;
pub mod stem;
pub mod train;

pub use error::{Error, Result};
