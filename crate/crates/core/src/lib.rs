pub mod config;
pub mod error;
pub mod geometry;
pub mod heightfusion;
pub mod inversion;
pub mod io;
pub mod nonlocal;
pub mod pipeline;
pub mod plot;
pub mod raster;
pub mod simulator;
pub mod stack;
pub mod validation;

pub use error::{Error, Result};
