//! Region-based shape matching: overlapping particle clusters, best-fit rigid
//! goals, correction blending, and distance links.
//!
//! Cluster centers sit on a regular grid with pitch `cluster_spacing`,
//! anchored at the particle bounding-box minimum corner. Membership uses the
//! Chebyshev (axis-wise) distance: a cluster is the axis-aligned cube of
//! half-extent `cluster_radius` around its center. With that metric the
//! documented coverage rule `cluster_radius >= cluster_spacing / 2` is exact:
//! every point of the bounding box is within half a pitch of a grid node on
//! each axis, so no particle can be orphaned. Euclidean balls would need
//! `radius >= spacing * sqrt(3)/2` on a grid and would leave holes for
//! parameter sets the coverage rule admits.

use crate::polar::{extract_rotation, RotationPath};
use crate::{Mat3, Vec3};
use std::collections::HashSet;

use thiserror::Error;

/// Relative slack on membership predicates so grid-aligned separations that
/// differ from the radius by rounding still qualify.
const MEMBERSHIP_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ShapeMatchError {
    #[error("no particles supplied")]
    EmptyInput,
    #[error(
        "cluster coverage failure: particle {particle} at ({x}, {y}, {z}) falls in no cluster \
         (cluster_radius below cluster_spacing/2, or pathological geometry)"
    )]
    Coverage {
        particle: usize,
        x: f64,
        y: f64,
        z: f64,
    },
    #[error("invalid cluster parameter {field}={value}: {constraint}")]
    InvalidParams {
        field: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

/// Cluster construction parameters, matching one row of the structure table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub cluster_spacing: f64,
    pub cluster_radius: f64,
    pub cluster_stiffness: f64,
    pub link_radius: f64,
    pub link_stiffness: f64,
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ShapeMatchError> {
        let positive = |field: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ShapeMatchError::InvalidParams {
                    field,
                    value,
                    constraint: "must be positive and finite",
                })
            }
        };
        positive("cluster_spacing", self.cluster_spacing)?;
        positive("cluster_radius", self.cluster_radius)?;
        positive("link_radius", self.link_radius)?;
        if self.cluster_radius < self.cluster_spacing / 2.0 {
            return Err(ShapeMatchError::InvalidParams {
                field: "cluster_radius",
                value: self.cluster_radius,
                constraint: "must be at least cluster_spacing / 2 (coverage condition)",
            });
        }
        let unit = |field: &'static str, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(ShapeMatchError::InvalidParams {
                    field,
                    value,
                    constraint: "must lie in [0, 1]",
                })
            }
        };
        unit("cluster_stiffness", self.cluster_stiffness)?;
        unit("link_stiffness", self.link_stiffness)?;
        Ok(())
    }
}

/// One shape-matching region: member particles and their rest configuration.
#[derive(Debug, Clone)]
pub struct ShapeCluster {
    /// Ascending, duplicate-free particle indices.
    pub member_indices: Vec<usize>,
    /// Rest positions of the members, same order as `member_indices`.
    pub rest_positions: Vec<Vec3>,
    /// Mean of `rest_positions` (uniform unit masses).
    pub rest_centroid: Vec3,
    pub stiffness: f64,
}

impl ShapeCluster {
    pub fn new(member_indices: Vec<usize>, rest_positions: Vec<Vec3>, stiffness: f64) -> Self {
        debug_assert_eq!(member_indices.len(), rest_positions.len());
        debug_assert!(!member_indices.is_empty());
        let rest_centroid = centroid(&rest_positions);
        Self {
            member_indices,
            rest_positions,
            rest_centroid,
            stiffness,
        }
    }
}

/// Pairwise rest-distance constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceLink {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let sum: Vec3 = points.iter().sum();
    sum / points.len() as f64
}

/// Builds overlapping shape-matching clusters over `particles`.
///
/// Grid nodes span `bbox_min + k * cluster_spacing` for
/// `k = 0..=ceil(extent / spacing)` on each axis; every particle within
/// Chebyshev distance `cluster_radius` of a node joins that node's cluster.
/// Nodes producing identical member sets are merged (small bodies are often
/// engulfed by several nodes at once), empty nodes are dropped, and any
/// orphaned particle is an error.
pub fn build_clusters(
    particles: &[Vec3],
    params: &ClusterParams,
) -> Result<Vec<ShapeCluster>, ShapeMatchError> {
    if particles.is_empty() {
        return Err(ShapeMatchError::EmptyInput);
    }
    let spacing = params.cluster_spacing;
    let radius = params.cluster_radius;
    if !(spacing > 0.0) || !(radius > 0.0) {
        return Err(ShapeMatchError::InvalidParams {
            field: if spacing > 0.0 {
                "cluster_radius"
            } else {
                "cluster_spacing"
            },
            value: if spacing > 0.0 { radius } else { spacing },
            constraint: "must be positive and finite",
        });
    }

    let (min, max) = bounding_box(particles);
    let nodes_per_axis: [usize; 3] = std::array::from_fn(|axis| {
        let extent = max[axis] - min[axis];
        (extent / spacing).ceil() as usize + 1
    });

    let node_count = nodes_per_axis[0] * nodes_per_axis[1] * nodes_per_axis[2];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); node_count];
    let mut covered = vec![false; particles.len()];

    let reach = radius * (1.0 + MEMBERSHIP_EPS);
    for (pi, p) in particles.iter().enumerate() {
        // Qualifying node-index interval per axis; membership is the product
        // of the per-axis intervals because the metric is axis-wise.
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut any = true;
        for axis in 0..3 {
            let rel = p[axis] - min[axis];
            let lo_f = ((rel - reach) / spacing).ceil().max(0.0);
            let hi_f = ((rel + reach) / spacing).floor();
            if hi_f < lo_f {
                any = false;
                break;
            }
            lo[axis] = lo_f as usize;
            hi[axis] = (hi_f as usize).min(nodes_per_axis[axis] - 1);
            if lo[axis] > hi[axis] {
                any = false;
                break;
            }
        }
        if !any {
            continue;
        }
        for ix in lo[0]..=hi[0] {
            for iy in lo[1]..=hi[1] {
                for iz in lo[2]..=hi[2] {
                    let node = (ix * nodes_per_axis[1] + iy) * nodes_per_axis[2] + iz;
                    members[node].push(pi);
                    covered[pi] = true;
                }
            }
        }
    }

    if let Some(orphan) = covered.iter().position(|c| !c) {
        let p = particles[orphan];
        return Err(ShapeMatchError::Coverage {
            particle: orphan,
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut clusters = Vec::new();
    for member_list in members {
        if member_list.is_empty() || seen.contains(&member_list) {
            continue;
        }
        let rest: Vec<Vec3> = member_list.iter().map(|&i| particles[i]).collect();
        seen.insert(member_list.clone());
        clusters.push(ShapeCluster::new(
            member_list,
            rest,
            params.cluster_stiffness,
        ));
    }
    Ok(clusters)
}

fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut min = points[0];
    let mut max = points[0];
    for p in points {
        min = min.inf(p);
        max = max.sup(p);
    }
    (min, max)
}

/// Result of projecting one cluster.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterProjection {
    /// Moment matrix had rank < 3; identity rotation was used this pass.
    pub degenerate: bool,
    /// Sum of squared goal-position violations before the correction.
    pub residual_sq: f64,
}

/// Computes per-member shape-matching corrections for one cluster.
///
/// The goal positions are the best-fit rigid transform of the rest shape onto
/// the predicted member positions (uniform unit masses; pinned particles
/// contribute to the fit but receive zero correction). `effective_stiffness`
/// is the iteration-corrected stiffness, see
/// [`crate::pbd::apply_stiffness_iteration_correction`]. Corrections are
/// written to `corrections`, one per member, in member order.
pub fn project_shape_matching(
    cluster: &ShapeCluster,
    predicted: &[Vec3],
    inv_mass: &[f64],
    effective_stiffness: f64,
    corrections: &mut Vec<Vec3>,
) -> ClusterProjection {
    corrections.clear();
    let n = cluster.member_indices.len();
    let mut current_centroid = Vec3::zeros();
    for &i in &cluster.member_indices {
        current_centroid += predicted[i];
    }
    current_centroid /= n as f64;

    // A = sum_i p_i (q_i - c0)^T; the -c (q_i - c0)^T term vanishes because
    // the rest offsets sum to zero.
    let mut moment = Mat3::zeros();
    for (k, &i) in cluster.member_indices.iter().enumerate() {
        let rest_offset = cluster.rest_positions[k] - cluster.rest_centroid;
        moment += predicted[i] * rest_offset.transpose();
    }

    let extraction = extract_rotation(&moment);
    let rotation = match extraction.path {
        RotationPath::Degenerate => Mat3::identity(),
        _ => extraction.rotation,
    };

    let mut residual_sq = 0.0;
    for (k, &i) in cluster.member_indices.iter().enumerate() {
        let rest_offset = cluster.rest_positions[k] - cluster.rest_centroid;
        let goal = rotation * rest_offset + current_centroid;
        let delta = goal - predicted[i];
        residual_sq += delta.norm_squared();
        if inv_mass[i] > 0.0 {
            corrections.push(delta * effective_stiffness);
        } else {
            corrections.push(Vec3::zeros());
        }
    }

    ClusterProjection {
        degenerate: extraction.is_degenerate(),
        residual_sq,
    }
}

/// Averages per-cluster corrections into one displacement per particle.
///
/// Each particle's displacement is the unweighted mean of the corrections
/// from every cluster containing it; particles in no cluster get zero.
pub fn blend_overlapping_corrections(
    clusters: &[ShapeCluster],
    per_cluster: &[Vec<Vec3>],
    particle_count: usize,
) -> Vec<Vec3> {
    let mut sums = vec![Vec3::zeros(); particle_count];
    let mut counts = vec![0u32; particle_count];
    accumulate_corrections(clusters, per_cluster, &mut sums, &mut counts);
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        if count > 0 {
            *sum /= count as f64;
        }
    }
    sums
}

/// Accumulation half of the blend; the solver reuses these buffers.
pub(crate) fn accumulate_corrections(
    clusters: &[ShapeCluster],
    per_cluster: &[Vec<Vec3>],
    sums: &mut [Vec3],
    counts: &mut [u32],
) {
    for (cluster, corrections) in clusters.iter().zip(per_cluster) {
        for (&i, correction) in cluster.member_indices.iter().zip(corrections) {
            sums[i] += correction;
            counts[i] += 1;
        }
    }
}

/// Builds one distance link per unordered particle pair with separation
/// within `link_radius`, rest length equal to the initial separation.
pub fn build_links(particles: &[Vec3], link_radius: f64, link_stiffness: f64) -> Vec<DistanceLink> {
    assert!(
        link_radius > 0.0 && link_radius.is_finite(),
        "link_radius must be positive"
    );
    let reach = link_radius * (1.0 + MEMBERSHIP_EPS);
    let reach_sq = reach * reach;

    // Hash grid with cell size link_radius; candidates come from the 27
    // surrounding cells. Map iteration order is never observed: links are
    // emitted i-major with sorted j, so output order is deterministic.
    let cell_of = |p: &Vec3| -> (i64, i64, i64) {
        (
            (p.x / link_radius).floor() as i64,
            (p.y / link_radius).floor() as i64,
            (p.z / link_radius).floor() as i64,
        )
    };
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in particles.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i);
    }

    let mut links = Vec::new();
    let mut neighbors = Vec::new();
    for (i, p) in particles.iter().enumerate() {
        neighbors.clear();
        let (cx, cy, cz) = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in cell {
                            if j > i && (particles[j] - p).norm_squared() <= reach_sq {
                                neighbors.push(j);
                            }
                        }
                    }
                }
            }
        }
        neighbors.sort_unstable();
        for &j in &neighbors {
            links.push(DistanceLink {
                i,
                j,
                rest_length: (particles[j] - particles[i]).norm(),
                stiffness: link_stiffness,
            });
        }
    }
    links
}
