//! Tunable parameters shared across the pipeline.
//!
//! Everything here has a default; scenario files may override any field.

use serde::{Deserialize, Serialize};

/// Parameters for free-space polytope generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolytopeParams {
    /// Azimuth step of the cylindrical sampler, degrees.
    pub sample_azimuth_deg: f64,
    /// Number of height rings of the cylindrical sampler.
    pub sample_rings: usize,
    /// Flip radius as a multiple of the sensor range. Must be >= 1 so the
    /// sphere mapping is orientation preserving.
    pub flip_radius_factor: f64,
    /// Travel distance between polytope generations, as a multiple of the
    /// sensor range.
    pub gen_spacing_factor: f64,
}

impl Default for PolytopeParams {
    fn default() -> Self {
        Self {
            sample_azimuth_deg: 5.0,
            sample_rings: 5,
            flip_radius_factor: 2.0,
            gen_spacing_factor: 0.5,
        }
    }
}

/// Parameters for frontier clustering and viewpoint generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SfiParams {
    /// Weight of the tangential distance term.
    pub w_tangential: f64,
    /// Weight of the normal distance term.
    pub w_normal: f64,
    /// Weight of the normal difference term.
    pub w_delta: f64,
    /// Gaussian kernel width, meters.
    pub sigma: f64,
    /// Neighbor count for the degree-matrix graph.
    pub knn: usize,
    /// Cap on a cluster's spatial radius about its center, meters.
    pub cluster_extent_max: f64,
    /// Preferred viewing distance as a multiple of the sensor range.
    pub r_opt_factor: f64,
    /// Viewpoint score weight on angular error.
    pub w_theta: f64,
    /// Viewpoint score weight on range error.
    pub w_range: f64,
    /// Super-viewpoint agglomeration radius as a multiple of sensor range.
    pub svp_radius_factor: f64,
    /// MeshTable sphere raster cell size, degrees.
    pub meshtable_cell_deg: f64,
}

impl Default for SfiParams {
    fn default() -> Self {
        Self {
            w_tangential: 1.0,
            w_normal: 1.0,
            w_delta: 2.0,
            sigma: 1.0,
            knn: 8,
            cluster_extent_max: 8.0,
            r_opt_factor: 0.6,
            w_theta: 1.0,
            w_range: 0.5,
            svp_radius_factor: 0.3,
            meshtable_cell_deg: 2.0,
        }
    }
}

/// Parameters for the routing solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Largest SVP count handed to the exact branch-and-bound solver.
    pub exact_cap: usize,
    /// Guided-local-search penalty scale as a multiple of mean arc cost.
    pub gls_lambda_factor: f64,
    /// Iteration cap for guided local search.
    pub gls_iter_cap: usize,
    /// Stop after this many penalization rounds without a best improvement.
    pub gls_stall_rounds: usize,
    /// Optional wall-clock cap in milliseconds. Disabled (None) by default:
    /// a time-based cutoff would break run-to-run bit determinism.
    pub gls_wall_cap_ms: Option<u64>,
    /// Replan when plan slack falls below this multiple of one tick of travel.
    pub slack_min_ticks: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            exact_cap: 10,
            gls_lambda_factor: 0.2,
            gls_iter_cap: 5000,
            gls_stall_rounds: 40,
            gls_wall_cap_ms: None,
            slack_min_ticks: 1.2,
        }
    }
}

/// Bandwidth accounting for the hypothetical raw-scan baseline: whenever a
/// polytope crosses the air, the baseline is charged the organized point
/// cloud of the same sensor frame (one 3 x f32 point per beam).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudParams {
    /// Native scan azimuth resolution, degrees.
    pub native_azimuth_deg: f64,
    /// Native scan beam (ring) count.
    pub native_rings: usize,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            native_azimuth_deg: 1.0,
            native_rings: 16,
        }
    }
}

/// Full parameter set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    pub polytope: PolytopeParams,
    pub sfi: SfiParams,
    pub solver: SolverParams,
    pub cloud: CloudParams,
}
