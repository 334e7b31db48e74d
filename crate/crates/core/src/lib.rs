pub mod analysis;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod freeprop;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod morrey;
pub mod perturbed;
pub mod quad;

pub use error::{Error, Result};
pub use grid::{AtomicMeasure, Field, Grid, GridSpec, Spectrum};
pub use morrey::{BallFamily, BallShape, MorreyNorm, MorreyParams};
