pub mod datasets;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mixture;
pub mod neural;
pub mod numerics;
pub mod stein;
pub mod trainer;

pub use error::{Error, Result};
pub use mixture::{LatentBatch, MixturePrior};
