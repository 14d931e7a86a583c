//! Online low-rank and structured-sparse decomposition (O-LSD) for moving
//! object detection.
//!
//! Each incoming frame `d_t` is split into a background `L_{t-1} r_t` drawn from
//! a learned low-rank subspace and a foreground `s_t` penalized by an
//! overlapping-group ℓ1/ℓ∞ norm. After separation the subspace basis is
//! refreshed from two running accumulators, so memory does not grow with the
//! length of the sequence.
//!
//! Module map:
//!
//! * [`model`]: frames, hyperparameters, the subspace model and its initialization.
//! * [`groups`]: overlapping pixel groups and the ℓ1/ℓ∞ norm they define.
//! * [`prox`]: proximal operator of the structured norm, solved through its dual.
//! * [`separation`]: per-frame foreground/background block coordinate descent.
//! * [`subspace`]: accumulator updates, basis update and cost evaluators.
//! * [`pipeline`]: the online loop, temporal down-sampling and diagnostics.
//! * [`detection`]: segmentation, connected components, IoU matching and metrics.
//! * [`io`]: PGM frames, box files, metrics CSV, checkpoints and synthetic video.

pub mod detection;
pub mod error;
pub mod groups;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod prox;
pub mod separation;
pub mod subspace;

pub use error::{Error, Result};
pub use groups::GroupStructure;
pub use model::{default_hyperparams, init_subspace, Frame, HyperParams, SeparationResult, SubspaceModel};
