pub mod augment;
pub mod autodiff;
pub mod deform;
pub mod error;
mod interp;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod preprocess;
pub mod train;
pub mod volume_io;

pub use error::{Error, Result};
