//! Splittable-flow routing simulation, gravity traffic synthesis labeled with
//! maximum link utilization (MLU), and graph models that learn to predict it.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`]: capacitated directed graphs, Repetita/JSON parsing,
//!   structural metrics and node-removal variations.
//! * [`routing`]: SSP and ECMP simulation, per-edge loads and MLU.
//! * [`mcnf`]: approximate minimum-MLU multicommodity flow used to rescale
//!   synthetic traffic.
//! * [`traffic`]: gravity-model demand matrices and labeled datasets.
//! * [`autodiff`]: a small tape-based reverse-mode engine with Adam.
//! * [`models`]: the per-edge-weights attention layer and the GAT, GCN,
//!   GraphSAGE and MLP baselines.
//! * [`harness`]: training, grid search, metrics and analysis reports.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod io;
pub mod mcnf;
pub mod models;
pub mod rng;
pub mod routing;
pub mod topology;
pub mod traffic;

pub use error::{Error, Result};
pub use routing::{DemandMatrix, RoutingOutcome, Scheme};
pub use topology::Topology;
