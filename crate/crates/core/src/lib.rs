//! Headless position-based soft-tissue simulation for straight catheter
//! insertions: region-based shape matching with overlapping clusters,
//! pairwise distance links, and kinematic capsule contacts, plus the
//! deformation metrics and parameter calibration built on top.
//!
//! All lengths are in metres (`0.005` is 5 mm), times in seconds, speeds in
//! metres per second. Stiffnesses are unitless in `[0, 1]` and are
//! iteration-corrected inside the solver, so converged behaviour does not
//! depend on the iteration count.
//!
//! Simulations are deterministic: identical inputs produce bit-identical
//! trajectories and records regardless of thread count.

pub mod calibration;
pub mod catheter;
pub mod geometry;
pub mod metrics;
pub mod pbd;
pub mod polar;
pub mod scene;
pub mod shape_match;

/// Column vector in 3-space, `f64` throughout.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix, `f64` throughout.
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use calibration::{
    calibrate, load_structure_params, run_insertion_experiment, CalibrationError,
    CalibrationOutcome, ExperimentOutcome, ParamRange, ParamSpace, Protocol, StepTimings,
    StructureParamTable, StructureParams, TraceRow,
};
pub use catheter::{
    project_collisions, resolve_capsule_contact, CapsulePose, CatheterRig, ContactReport,
    ContactResolution,
};
pub use geometry::{
    load_mesh, make_box_mesh, parse_obj, sample_volume, GeometryError, ParticleSample,
    TriangleMesh,
};
pub use metrics::{
    com_displacement, mismatch_score, penetration_depth, sample_hole_perimeter,
    slab_average_displacement, InsertionRecord, MetricsError, Mismatch, PerimeterSamples,
    ProbeLine, ProbePoint, RecordFrame, Slab,
};
pub use pbd::{
    apply_stiffness_iteration_correction, ConstraintSet, ParticleSystem, PbdError, SimConfig,
    Solver, StepReport,
};
pub use polar::{extract_rotation, Extraction, RotationPath};
pub use scene::{Face, Scene, SceneBuilder, SceneError, SoftBody};
pub use shape_match::{
    blend_overlapping_corrections, build_clusters, build_links, project_shape_matching,
    ClusterParams, ClusterProjection, DistanceLink, ShapeCluster, ShapeMatchError,
};
