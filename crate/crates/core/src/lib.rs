//! Multi-robot exploration under limited communication: star-convex free
//! space, super-frontier information, rendezvous missions, and routing
//! solvers, driven by a deterministic discrete-time simulator.

pub mod central;
pub mod cluster;
pub mod config;
pub mod envlib;
pub mod frontier;
pub mod grid_path;
pub mod hull;
pub mod kdtree;
pub mod local;
pub mod meshtable;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod sfi;
pub mod starconvex;
pub mod world;
