//! Heterogeneous graph attention layers (RGAT, GTN, HGT) with learned
//! Laplacian positional encodings, on a small dense autodiff core.

pub mod error;
pub mod graph;
pub mod gtn;
pub mod hgt;
pub mod nn;
pub mod numcore;
pub mod rgat;
pub mod spectral;
pub mod tasks;

pub use error::{Error, Result};
pub use graph::{HeteroGraph, Relation, Task};
pub use nn::{apply_pe, Activation, GraphContext, PeMode, Positional};
pub use numcore::{Matrix, ParamStore};
pub use spectral::{compute_basis, lpe_forward, SpectralBasis};
pub use tasks::{run_trials, train, Architecture, ModelConfig, TrainReport};
