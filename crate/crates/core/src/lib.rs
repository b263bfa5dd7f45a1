pub mod datagen;
pub mod error;
pub mod glasso;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pnn;
pub mod stats;
pub mod train;

pub use error::{PnnError, Result};
pub use linalg::{EigPair, SymMatrix};
pub use stats::Dataset;
