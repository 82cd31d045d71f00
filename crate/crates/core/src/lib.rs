//! Simulation and Monte Carlo verification of Markov processes indexed by
//! continuous-time Galton-Watson trees.
//!
//! A population starts from a single individual. Each individual lives an
//! independent exponential time with rate `r`, then is replaced by `k`
//! children with probability `p_k`. Along its lifetime the individual carries
//! a Markov state (diffusion, Lévy process, or deterministic flow); at a
//! branching event the children states are produced from the mother state by
//! a branching kernel. The crate provides
//!
//! * exact event-driven simulation of the genealogy ([`gw_tree`]) and of the
//!   full tree-indexed process ([`branching_sim`]),
//! * the size-biased auxiliary ("spine") process whose law matches that of a
//!   uniformly sampled lineage, together with the `J1`/`J2` fork operators
//!   ([`auxiliary`]),
//! * statistical checks that compare population functionals against their
//!   spine-side representations: moment identities, fixed-time and whole-tree
//!   sum identities, fork second moments, laws of large numbers for alive and
//!   dead populations, a spatial central limit theorem for branching Lévy
//!   walks, and the martingale bracket of the fluctuation process
//!   ([`verify`]),
//! * a catalog of concrete models ([`models`]) and a config-driven runner
//!   ([`config`], [`report`]).
//!
//! Everything is deterministic given a 64-bit seed: replicas and tree nodes
//! draw from independent substreams derived from `(seed, replica, label)`,
//! and all reductions run in a fixed order, so results are identical at any
//! parallelism degree.

pub mod auxiliary;
pub mod branching_sim;
pub mod config;
pub mod error;
pub mod gw_tree;
pub mod models;
pub mod motion;
pub mod offspring;
pub mod report;
pub mod rng;
pub mod stats;
pub mod verify;

pub use branching_sim::{BranchingModel, PopulationRealization};
pub use error::SimError;
pub use gw_tree::{GWTree, NodeLabel};
pub use motion::{BranchingKernel, MotionModel, State};
pub use offspring::OffspringDistribution;
pub use stats::McEstimate;
pub use verify::CheckReport;


/// Crate-wide result alias.
pub type Result<T, E = SimError> = std::result::Result<T, E>;
