//! Position-based dynamics loop: prediction, iterative constraint
//! projection, and velocity update.
//!
//! Each step predicts positions from velocities and gravity, then runs a
//! fixed number of projection iterations in a fixed order (shape-matching
//! clusters, distance links, capsule contacts) and rebuilds velocities from
//! the net position change. Constraint stiffness is iteration-corrected so
//! the converged behaviour does not drift with the iteration count.
//!
//! Everything here is deterministic: the cluster pass gathers corrections in
//! parallel but merges them in cluster order, links run Gauss-Seidel in
//! construction order, and no randomness is involved.

use crate::catheter::{resolve_capsule_contact, CapsulePose};
use crate::shape_match::{accumulate_corrections, project_shape_matching, DistanceLink, ShapeCluster};
use crate::Vec3;
use rayon::prelude::*;
use thiserror::Error;

/// Cluster count above which the projection pass fans out to the thread pool.
const PARALLEL_CLUSTER_THRESHOLD: usize = 64;

#[derive(Debug, Error)]
pub enum PbdError {
    #[error("non-finite {quantity} for particle {particle} after {stage}")]
    NonFinite {
        stage: &'static str,
        quantity: &'static str,
        particle: usize,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Particle state: double-buffered positions plus immutable rest shape.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Inverse masses; zero pins a particle in place.
    pub inv_mass: Vec<f64>,
    pub rest_positions: Vec<Vec3>,
}

impl ParticleSystem {
    /// All particles start at rest with unit mass.
    pub fn new(rest_positions: Vec<Vec3>) -> Self {
        let n = rest_positions.len();
        Self {
            positions: rest_positions.clone(),
            velocities: vec![Vec3::zeros(); n],
            inv_mass: vec![1.0; n],
            rest_positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn pin(&mut self, index: usize) {
        self.inv_mass[index] = 0.0;
        self.velocities[index] = Vec3::zeros();
    }

    pub fn is_pinned(&self, index: usize) -> bool {
        self.inv_mass[index] == 0.0
    }
}

/// Time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub solver_iterations: usize,
    pub substeps: usize,
    pub gravity: Vec3,
    /// Velocity damping factor per step, applied as `v *= 1 - damping`.
    pub damping: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 60.0,
            solver_iterations: 4,
            substeps: 1,
            gravity: Vec3::zeros(),
            damping: 0.01,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), PbdError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(PbdError::InvalidConfig("dt must be positive and finite"));
        }
        if self.solver_iterations == 0 {
            return Err(PbdError::InvalidConfig("solver_iterations must be >= 1"));
        }
        if self.substeps == 0 {
            return Err(PbdError::InvalidConfig("substeps must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(PbdError::InvalidConfig("damping must lie in [0, 1)"));
        }
        if !(self.gravity.x.is_finite() && self.gravity.y.is_finite() && self.gravity.z.is_finite())
        {
            return Err(PbdError::InvalidConfig("gravity must be finite"));
        }
        Ok(())
    }
}

/// Constraints acting on one particle system. Capsule poses are kinematic and
/// may be rewritten between steps as the instrument moves.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub clusters: Vec<ShapeCluster>,
    pub links: Vec<DistanceLink>,
    pub capsules: Vec<CapsulePose>,
    /// Extra clearance added to each capsule radius when resolving contacts.
    pub contact_margin: f64,
    /// Optional Coulomb friction coefficient for capsule contacts; `None`
    /// leaves tangential motion untouched.
    pub friction: Option<f64>,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// Largest particle displacement over the whole step.
    pub max_position_delta: f64,
    /// Largest particle speed after the velocity update.
    pub max_speed: f64,
    /// RMS shape-matching goal violation per iteration (last substep),
    /// measured before that iteration's correction.
    pub cluster_residuals: Vec<f64>,
    /// RMS link length violation per iteration (last substep).
    pub link_residuals: Vec<f64>,
    /// Particles in capsule contact during the final iteration, summed over
    /// substeps.
    pub contacts: usize,
    /// Contacts whose particle sat on a capsule axis and was pushed out along
    /// an arbitrary fixed perpendicular.
    pub on_axis_contacts: usize,
    /// Clusters that fell back to the identity rotation in the final
    /// iteration of the last substep.
    pub degenerate_clusters: usize,
}

/// Converts a per-constraint stiffness into the per-iteration factor that
/// yields the same net correction after `iterations` rounds:
/// `k' = 1 - (1 - k)^(1/iterations)`.
pub fn apply_stiffness_iteration_correction(stiffness: f64, iterations: usize) -> f64 {
    debug_assert!((0.0..=1.0).contains(&stiffness));
    debug_assert!(iterations >= 1);
    if iterations == 1 {
        return stiffness;
    }
    1.0 - (1.0 - stiffness).powf(1.0 / iterations as f64)
}

/// Reusable solver scratch space.
#[derive(Debug, Default)]
pub struct Solver {
    predicted: Vec<Vec3>,
    correction_sums: Vec<Vec3>,
    correction_counts: Vec<u32>,
    per_cluster: Vec<Vec<Vec3>>,
    effective_cluster_stiffness: Vec<f64>,
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the system by one step of `config.dt`.
    pub fn step(
        &mut self,
        system: &mut ParticleSystem,
        constraints: &ConstraintSet,
        config: &SimConfig,
    ) -> Result<StepReport, PbdError> {
        config.validate()?;
        let n = system.len();
        debug_assert_eq!(system.velocities.len(), n);
        debug_assert_eq!(system.inv_mass.len(), n);

        self.predicted.resize(n, Vec3::zeros());
        self.correction_sums.resize(n, Vec3::zeros());
        self.correction_counts.resize(n, 0);
        self.per_cluster
            .resize(constraints.clusters.len(), Vec::new());
        self.effective_cluster_stiffness.clear();
        self.effective_cluster_stiffness.extend(
            constraints.clusters.iter().map(|c| {
                apply_stiffness_iteration_correction(c.stiffness, config.solver_iterations)
            }),
        );

        let dt = config.dt / config.substeps as f64;
        let damping = 1.0 - config.damping;
        let mut report = StepReport::default();
        let mut max_delta_sq = 0.0f64;
        let mut max_speed_sq = 0.0f64;

        for _ in 0..config.substeps {
            for i in 0..n {
                if system.inv_mass[i] > 0.0 {
                    system.velocities[i] += config.gravity * dt;
                    system.velocities[i] *= damping;
                }
                self.predicted[i] = system.positions[i] + system.velocities[i] * dt;
            }
            scan_finite(&self.predicted, "prediction", "position")?;

            report.cluster_residuals.clear();
            report.link_residuals.clear();
            for iter in 0..config.solver_iterations {
                let last_iteration = iter + 1 == config.solver_iterations;
                let (cluster_rms, degenerate) = self.project_clusters(constraints, system);
                report.cluster_residuals.push(cluster_rms);
                if last_iteration {
                    report.degenerate_clusters = degenerate;
                }

                let link_rms = project_links(
                    &constraints.links,
                    &mut self.predicted,
                    &system.inv_mass,
                    config.solver_iterations,
                );
                report.link_residuals.push(link_rms);

                let (contacts, on_axis) = project_capsules(
                    constraints,
                    &mut self.predicted,
                    &system.positions,
                    &system.inv_mass,
                );
                if last_iteration {
                    report.contacts += contacts;
                    report.on_axis_contacts += on_axis;
                }
                scan_finite(&self.predicted, "constraint projection", "position")?;
            }

            for i in 0..n {
                let delta = self.predicted[i] - system.positions[i];
                max_delta_sq = max_delta_sq.max(delta.norm_squared());
                if system.inv_mass[i] > 0.0 {
                    system.velocities[i] = delta / dt;
                }
                max_speed_sq = max_speed_sq.max(system.velocities[i].norm_squared());
                system.positions[i] = self.predicted[i];
            }
            scan_finite(&system.velocities, "velocity update", "velocity")?;
        }

        report.max_position_delta = max_delta_sq.sqrt();
        report.max_speed = max_speed_sq.sqrt();
        Ok(report)
    }

    /// One shape-matching pass: gather per-cluster corrections (in parallel
    /// for large scenes), then blend by unweighted mean in cluster order.
    fn project_clusters(
        &mut self,
        constraints: &ConstraintSet,
        system: &ParticleSystem,
    ) -> (f64, usize) {
        let clusters = &constraints.clusters;
        if clusters.is_empty() {
            return (0.0, 0);
        }
        let predicted = &self.predicted;
        let inv_mass = &system.inv_mass;
        let stiffness = &self.effective_cluster_stiffness;

        let outcomes: Vec<(f64, bool)> = if clusters.len() >= PARALLEL_CLUSTER_THRESHOLD {
            self.per_cluster
                .par_iter_mut()
                .zip(clusters.par_iter())
                .zip(stiffness.par_iter())
                .map(|((out, cluster), &k)| {
                    let r = project_shape_matching(cluster, predicted, inv_mass, k, out);
                    (r.residual_sq, r.degenerate)
                })
                .collect()
        } else {
            self.per_cluster
                .iter_mut()
                .zip(clusters.iter())
                .zip(stiffness.iter())
                .map(|((out, cluster), &k)| {
                    let r = project_shape_matching(cluster, predicted, inv_mass, k, out);
                    (r.residual_sq, r.degenerate)
                })
                .collect()
        };

        let mut residual_sq = 0.0;
        let mut membership = 0usize;
        let mut degenerate = 0usize;
        for ((sq, deg), cluster) in outcomes.iter().zip(clusters) {
            residual_sq += sq;
            membership += cluster.member_indices.len();
            degenerate += usize::from(*deg);
        }

        self.correction_sums.fill(Vec3::zeros());
        self.correction_counts.fill(0);
        accumulate_corrections(
            clusters,
            &self.per_cluster,
            &mut self.correction_sums,
            &mut self.correction_counts,
        );
        for i in 0..self.predicted.len() {
            let count = self.correction_counts[i];
            if count > 0 && system.inv_mass[i] > 0.0 {
                self.predicted[i] += self.correction_sums[i] / count as f64;
            }
        }

        ((residual_sq / membership as f64).sqrt(), degenerate)
    }
}

fn project_links(
    links: &[DistanceLink],
    predicted: &mut [Vec3],
    inv_mass: &[f64],
    iterations: usize,
) -> f64 {
    if links.is_empty() {
        return 0.0;
    }
    let mut violation_sq = 0.0;
    for link in links {
        let w_i = inv_mass[link.i];
        let w_j = inv_mass[link.j];
        let w_sum = w_i + w_j;
        let d = predicted[link.j] - predicted[link.i];
        let dist = d.norm();
        if dist <= f64::EPSILON {
            continue;
        }
        let c = dist - link.rest_length;
        violation_sq += c * c;
        if w_sum == 0.0 {
            continue;
        }
        let k = apply_stiffness_iteration_correction(link.stiffness, iterations);
        let correction = d * (k * c / (dist * w_sum));
        predicted[link.i] += correction * w_i;
        predicted[link.j] -= correction * w_j;
    }
    (violation_sq / links.len() as f64).sqrt()
}

fn project_capsules(
    constraints: &ConstraintSet,
    predicted: &mut [Vec3],
    step_start: &[Vec3],
    inv_mass: &[f64],
) -> (usize, usize) {
    if constraints.capsules.is_empty() {
        return (0, 0);
    }
    let mut contacts = 0;
    let mut on_axis = 0;
    for i in 0..predicted.len() {
        if inv_mass[i] == 0.0 {
            continue;
        }
        for capsule in &constraints.capsules {
            if let Some(resolution) = resolve_capsule_contact(
                capsule,
                predicted[i],
                step_start[i],
                constraints.contact_margin,
                constraints.friction,
            ) {
                predicted[i] = resolution.position;
                contacts += 1;
                on_axis += usize::from(resolution.on_axis);
            }
        }
    }
    (contacts, on_axis)
}

fn scan_finite(
    values: &[Vec3],
    stage: &'static str,
    quantity: &'static str,
) -> Result<(), PbdError> {
    for (particle, v) in values.iter().enumerate() {
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(PbdError::NonFinite {
                stage,
                quantity,
                particle,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape_match::{build_clusters, build_links, ClusterParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, spacing: f64) -> Vec<Vec3> {
        let mut v = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    v.push(Vec3::new(
                        x as f64 * spacing,
                        y as f64 * spacing,
                        z as f64 * spacing,
                    ));
                }
            }
        }
        v
    }

    fn cluster_params(spacing: f64, stiffness: f64) -> ClusterParams {
        ClusterParams {
            cluster_spacing: spacing,
            cluster_radius: spacing,
            cluster_stiffness: stiffness,
            link_radius: spacing,
            link_stiffness: 1.0,
        }
    }

    #[test]
    fn stiffness_iteration_correction_examples() {
        assert!((apply_stiffness_iteration_correction(0.75, 2) - 0.5).abs() < 1e-15);
        assert_eq!(apply_stiffness_iteration_correction(0.3, 1), 0.3);
        assert_eq!(apply_stiffness_iteration_correction(1.0, 7), 1.0);
        assert_eq!(apply_stiffness_iteration_correction(0.0, 5), 0.0);
    }

    #[test]
    fn rest_state_is_an_equilibrium() {
        let rest = grid(4, 0.01);
        let mut system = ParticleSystem::new(rest.clone());
        let params = cluster_params(0.02, 0.8);
        let constraints = ConstraintSet {
            clusters: build_clusters(&rest, &params).unwrap(),
            links: build_links(&rest, 0.011, 0.9),
            ..ConstraintSet::default()
        };
        let config = SimConfig {
            damping: 0.0,
            ..SimConfig::default()
        };
        let mut solver = Solver::new();
        for _ in 0..10 {
            let report = solver.step(&mut system, &constraints, &config).unwrap();
            assert!(report.max_position_delta < 1e-12);
        }
        for (p, q) in system.positions.iter().zip(&rest) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn free_fall_matches_symplectic_euler() {
        let mut system = ParticleSystem::new(vec![Vec3::zeros()]);
        let config = SimConfig {
            gravity: Vec3::new(0.0, -9.81, 0.0),
            damping: 0.0,
            ..SimConfig::default()
        };
        let mut solver = Solver::new();
        let steps = 120;
        for _ in 0..steps {
            solver
                .step(&mut system, &ConstraintSet::default(), &config)
                .unwrap();
        }
        let n = steps as f64;
        let expected_y = -9.81 * config.dt * config.dt * n * (n + 1.0) / 2.0;
        assert!((system.positions[0].y - expected_y).abs() < 1e-9);
        assert!((system.velocities[0].y - -9.81 * config.dt * n).abs() < 1e-9);
    }

    #[test]
    fn damping_scales_velocity_each_step() {
        let mut system = ParticleSystem::new(vec![Vec3::zeros()]);
        system.velocities[0] = Vec3::new(1.0, 0.0, 0.0);
        let config = SimConfig {
            damping: 0.01,
            ..SimConfig::default()
        };
        let mut solver = Solver::new();
        solver
            .step(&mut system, &ConstraintSet::default(), &config)
            .unwrap();
        assert!((system.velocities[0].x - 0.99).abs() < 1e-12);
    }

    #[test]
    fn stretched_link_converges_and_conserves_momentum() {
        let rest = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let mut system = ParticleSystem::new(rest);
        system.positions[1].x = 1.5;
        let constraints = ConstraintSet {
            links: vec![DistanceLink {
                i: 0,
                j: 1,
                rest_length: 1.0,
                stiffness: 1.0,
            }],
            ..ConstraintSet::default()
        };
        let config = SimConfig {
            damping: 0.0,
            ..SimConfig::default()
        };
        let centroid_before =
            (system.positions[0] + system.positions[1]) / 2.0;
        let mut solver = Solver::new();
        solver.step(&mut system, &constraints, &config).unwrap();
        let gap = (system.positions[1] - system.positions[0]).norm();
        assert!((gap - 1.0).abs() < 1e-9, "unit stiffness solves in one step");
        let centroid_after = (system.positions[0] + system.positions[1]) / 2.0;
        assert!(
            (centroid_after - centroid_before).norm() < 1e-12,
            "equal masses keep the pair centroid fixed"
        );
    }

    #[test]
    fn pinned_particles_never_move() {
        let rest = grid(3, 0.01);
        let mut system = ParticleSystem::new(rest.clone());
        system.pin(0);
        for v in system.velocities.iter_mut() {
            *v = Vec3::new(0.05, 0.0, 0.0);
        }
        system.velocities[0] = Vec3::zeros();
        let params = cluster_params(0.02, 0.5);
        let constraints = ConstraintSet {
            clusters: build_clusters(&rest, &params).unwrap(),
            links: build_links(&rest, 0.011, 0.8),
            ..ConstraintSet::default()
        };
        let config = SimConfig::default();
        let mut solver = Solver::new();
        for _ in 0..20 {
            solver.step(&mut system, &constraints, &config).unwrap();
            assert_eq!(system.positions[0], rest[0]);
            assert_eq!(system.velocities[0], Vec3::zeros());
        }
    }

    #[test]
    fn cluster_residual_is_monotone_within_a_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rest = grid(4, 1.0);
        let params = cluster_params(2.0, 0.6);
        let clusters = build_clusters(&rest, &params).unwrap();
        for _ in 0..100 {
            let mut system = ParticleSystem::new(rest.clone());
            for p in system.positions.iter_mut() {
                *p += Vec3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                );
            }
            let constraints = ConstraintSet {
                clusters: clusters.clone(),
                ..ConstraintSet::default()
            };
            let config = SimConfig {
                solver_iterations: 6,
                damping: 0.0,
                ..SimConfig::default()
            };
            let mut solver = Solver::new();
            let report = solver.step(&mut system, &constraints, &config).unwrap();
            for w in report.cluster_residuals.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-9),
                    "residual rose between iterations: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn non_finite_input_aborts_with_location() {
        let mut system = ParticleSystem::new(grid(2, 1.0));
        system.velocities[3] = Vec3::new(f64::NAN, 0.0, 0.0);
        let mut solver = Solver::new();
        let err = solver
            .step(&mut system, &ConstraintSet::default(), &SimConfig::default())
            .unwrap_err();
        match err {
            PbdError::NonFinite {
                stage, particle, ..
            } => {
                assert_eq!(stage, "prediction");
                assert_eq!(particle, 3);
            }
            other => panic!("expected non-finite error, got {other}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut system = ParticleSystem::new(vec![Vec3::zeros()]);
        let mut solver = Solver::new();
        for config in [
            SimConfig {
                dt: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                solver_iterations: 0,
                ..SimConfig::default()
            },
            SimConfig {
                substeps: 0,
                ..SimConfig::default()
            },
            SimConfig {
                damping: 1.0,
                ..SimConfig::default()
            },
        ] {
            assert!(matches!(
                solver.step(&mut system, &ConstraintSet::default(), &config),
                Err(PbdError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn substeps_preserve_free_fall_distance() {
        let config_single = SimConfig {
            gravity: Vec3::new(0.0, -1.0, 0.0),
            damping: 0.0,
            ..SimConfig::default()
        };
        let config_split = SimConfig {
            substeps: 4,
            ..config_single
        };
        let mut a = ParticleSystem::new(vec![Vec3::zeros()]);
        let mut b = ParticleSystem::new(vec![Vec3::zeros()]);
        let mut solver = Solver::new();
        for _ in 0..60 {
            solver.step(&mut a, &ConstraintSet::default(), &config_single).unwrap();
            solver.step(&mut b, &ConstraintSet::default(), &config_split).unwrap();
        }
        // Finer integration of the same interval lands close by, not equal.
        assert!((a.positions[0].y - b.positions[0].y).abs() < 0.01);
        assert!(b.positions[0].y < -0.1);
    }

    #[test]
    fn net_cluster_correction_matches_requested_stiffness() {
        // A single particle displaced inside a rigid frame of pinned anchors:
        // after one step the correction fraction equals the configured
        // stiffness regardless of iteration count.
        let rest = grid(3, 1.0);
        for iterations in [1usize, 4, 8] {
            let mut system = ParticleSystem::new(rest.clone());
            for i in 0..rest.len() {
                if i != 13 {
                    system.pin(i);
                }
            }
            let displacement = Vec3::new(0.2, 0.0, 0.0);
            system.positions[13] += displacement;
            let params = cluster_params(2.0, 0.5);
            let constraints = ConstraintSet {
                clusters: build_clusters(&rest, &params).unwrap(),
                ..ConstraintSet::default()
            };
            let config = SimConfig {
                solver_iterations: iterations,
                damping: 0.0,
                ..SimConfig::default()
            };
            let mut solver = Solver::new();
            solver.step(&mut system, &constraints, &config).unwrap();
            let remaining = (system.positions[13] - rest[13]).norm();
            assert!(
                (remaining - 0.1).abs() < 0.02,
                "iterations={iterations}: expected ~half the displacement to remain, got {remaining}"
            );
        }
    }
}
