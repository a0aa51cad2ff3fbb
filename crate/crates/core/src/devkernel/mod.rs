//! Data deviation kernel: local recombination of data pieces at the same
//! sequence location, residual Gaussian noise, and an admissibility map.
//!
//! All values are in the dataset's normalized coordinates.

mod index;
mod kernel;

pub use index::{build_piece_index, dense_cutoff, dense_cutoff_across, CountsCache, PieceIndex};
pub use kernel::{Branch, DeviationKernel, KernelConfig, Neighborhood, Trace};
