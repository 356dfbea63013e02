//! Scene assembly: soft bodies, boundary pinning, and the measurement slab.
//!
//! A scene owns one particle system plus the constraint set acting on it.
//! Bodies are independent: each contributes a contiguous particle range with
//! its own clusters and links, and links never span bodies. Pinning fixes the
//! outermost particle layer of a bounding-box face, which is how a body is
//! anchored to its container.

use crate::geometry::ParticleSample;
use crate::metrics::Slab;
use crate::pbd::{ConstraintSet, ParticleSystem};
use crate::shape_match::{build_clusters, build_links, ClusterParams, ShapeMatchError};
use crate::Vec3;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene has no bodies")]
    NoBodies,
    #[error("body {name}: {source}")]
    Body {
        name: String,
        source: ShapeMatchError,
    },
    #[error("body {name} pins every particle; nothing can deform")]
    FullyPinned { name: String },
}

/// Bounding-box face of a body, used to select pinned particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMin,
        Face::XMax,
        Face::YMin,
        Face::YMax,
        Face::ZMin,
        Face::ZMax,
    ];

    fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    fn is_max(self) -> bool {
        matches!(self, Face::XMax | Face::YMax | Face::ZMax)
    }
}

/// One soft body inside a scene: its particle range and constraint ranges.
#[derive(Debug, Clone)]
pub struct SoftBody {
    pub name: String,
    pub particles: Range<usize>,
    pub clusters: Range<usize>,
    pub links: Range<usize>,
    pub params: ClusterParams,
    pub particle_spacing: f64,
}

/// A ready-to-simulate scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub system: ParticleSystem,
    pub constraints: ConstraintSet,
    pub bodies: Vec<SoftBody>,
    /// Measurement slab for displacement records, if configured.
    pub slab: Option<Slab>,
}

impl Scene {
    pub fn body(&self, name: &str) -> Option<&SoftBody> {
        self.bodies.iter().find(|b| b.name == name)
    }

    /// Coarsest particle spacing across bodies; used as the tolerance scale
    /// for probe gap checks.
    pub fn spacing_hint(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| b.particle_spacing)
            .fold(0.0, f64::max)
    }
}

struct PendingBody {
    name: String,
    positions: Vec<Vec3>,
    spacing: f64,
    params: ClusterParams,
    pinned_faces: Vec<Face>,
}

/// Assembles bodies into a [`Scene`].
#[derive(Default)]
pub struct SceneBuilder {
    bodies: Vec<PendingBody>,
    contact_margin: f64,
    friction: Option<f64>,
    slab: Option<Slab>,
}

/// Fraction of the particle spacing within which a particle counts as lying
/// on a bounding-box face.
const PIN_LAYER_FRACTION: f64 = 0.25;

impl SceneBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_body(
        mut self,
        name: &str,
        sample: ParticleSample,
        params: ClusterParams,
        pinned_faces: &[Face],
    ) -> Self {
        self.bodies.push(PendingBody {
            name: name.to_string(),
            positions: sample.positions,
            spacing: sample.spacing,
            params,
            pinned_faces: pinned_faces.to_vec(),
        });
        self
    }

    /// Extra clearance added to capsule contacts; typically half the particle
    /// spacing, so particles behave as small spheres rather than points.
    pub fn contact_margin(mut self, margin: f64) -> Self {
        self.contact_margin = margin;
        self
    }

    pub fn friction(mut self, mu: Option<f64>) -> Self {
        self.friction = mu;
        self
    }

    pub fn measurement_slab(mut self, slab: Slab) -> Self {
        self.slab = Some(slab);
        self
    }

    pub fn build(self) -> Result<Scene, SceneError> {
        if self.bodies.is_empty() {
            return Err(SceneError::NoBodies);
        }
        let mut rest = Vec::new();
        let mut constraints = ConstraintSet {
            contact_margin: self.contact_margin,
            friction: self.friction,
            ..ConstraintSet::default()
        };
        let mut bodies = Vec::new();
        let mut pinned: Vec<usize> = Vec::new();

        for body in self.bodies {
            let wrap = |source| SceneError::Body {
                name: body.name.clone(),
                source,
            };
            body.params.validate().map_err(wrap)?;
            let base = rest.len();
            let cluster_base = constraints.clusters.len();
            let link_base = constraints.links.len();

            let mut clusters = build_clusters(&body.positions, &body.params).map_err(wrap)?;
            for c in clusters.iter_mut() {
                for i in c.member_indices.iter_mut() {
                    *i += base;
                }
            }
            let mut links =
                build_links(&body.positions, body.params.link_radius, body.params.link_stiffness);
            for l in links.iter_mut() {
                l.i += base;
                l.j += base;
            }

            let face_pins = select_pinned(&body.positions, &body.pinned_faces, body.spacing);
            if face_pins.len() == body.positions.len() {
                return Err(SceneError::FullyPinned { name: body.name });
            }
            pinned.extend(face_pins.into_iter().map(|i| i + base));

            constraints.clusters.extend(clusters);
            constraints.links.extend(links);
            bodies.push(SoftBody {
                name: body.name,
                particles: base..base + body.positions.len(),
                clusters: cluster_base..constraints.clusters.len(),
                links: link_base..constraints.links.len(),
                params: body.params,
                particle_spacing: body.spacing,
            });
            rest.extend(body.positions);
        }

        let mut system = ParticleSystem::new(rest);
        for i in pinned {
            system.pin(i);
        }
        Ok(Scene {
            system,
            constraints,
            bodies,
            slab: self.slab,
        })
    }
}

fn select_pinned(positions: &[Vec3], faces: &[Face], spacing: f64) -> Vec<usize> {
    if faces.is_empty() {
        return Vec::new();
    }
    let mut min = positions[0];
    let mut max = positions[0];
    for p in positions {
        min = min.inf(p);
        max = max.sup(p);
    }
    let tol = spacing * PIN_LAYER_FRACTION;
    let mut out = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let on_face = faces.iter().any(|f| {
            let bound = if f.is_max() {
                max[f.axis()]
            } else {
                min[f.axis()]
            };
            (p[f.axis()] - bound).abs() <= tol
        });
        if on_face {
            out.push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_box_mesh, sample_volume};

    fn box_sample(extent: Vec3, spacing: f64) -> ParticleSample {
        let mesh = make_box_mesh(Vec3::zeros(), extent);
        sample_volume(&mesh, spacing).unwrap()
    }

    fn params(spacing: f64) -> ClusterParams {
        ClusterParams {
            cluster_spacing: spacing,
            cluster_radius: spacing,
            cluster_stiffness: 0.001,
            link_radius: spacing,
            link_stiffness: 0.001,
        }
    }

    #[test]
    fn pinning_selects_exactly_one_particle_layer() {
        let sample = box_sample(Vec3::new(0.02, 0.02, 0.02), 0.005);
        let n = sample.positions.len();
        assert_eq!(n, 64);
        let scene = SceneBuilder::new()
            .add_body("cube", sample, params(0.005), &[Face::XMin])
            .build()
            .unwrap();
        let pinned: Vec<usize> = (0..n).filter(|&i| scene.system.is_pinned(i)).collect();
        assert_eq!(pinned.len(), 16, "one 4x4 layer");
        for &i in &pinned {
            assert!(scene.system.positions[i].x < 0.003);
        }
    }

    #[test]
    fn all_faces_except_entry_leaves_an_interior() {
        let sample = box_sample(Vec3::new(0.02, 0.02, 0.02), 0.005);
        let faces: Vec<Face> = Face::ALL
            .into_iter()
            .filter(|f| *f != Face::XMin)
            .collect();
        let scene = SceneBuilder::new()
            .add_body("cube", sample, params(0.005), &faces)
            .build()
            .unwrap();
        let pinned = (0..64).filter(|&i| scene.system.is_pinned(i)).count();
        // 4^3 cube minus the 2x2x2 free core minus the free x_min layer's
        // non-edge particles: 64 - 8 - 4 = 52.
        assert_eq!(pinned, 52);
    }

    #[test]
    fn two_bodies_get_disjoint_index_ranges() {
        let a = box_sample(Vec3::new(0.02, 0.01, 0.01), 0.005);
        let b = box_sample(Vec3::new(0.01, 0.01, 0.01), 0.005);
        let n_a = a.positions.len();
        let n_b = b.positions.len();
        let scene = SceneBuilder::new()
            .add_body("a", a, params(0.005), &[])
            .add_body("b", b, params(0.005), &[])
            .build()
            .unwrap();
        assert_eq!(scene.system.len(), n_a + n_b);
        let (body_a, body_b) = (scene.body("a").unwrap(), scene.body("b").unwrap());
        assert_eq!(body_a.particles, 0..n_a);
        assert_eq!(body_b.particles, n_a..n_a + n_b);

        for c in &scene.constraints.clusters[body_b.clusters.clone()] {
            assert!(c.member_indices.iter().all(|&i| i >= n_a));
        }
        for l in &scene.constraints.links {
            let in_a = l.i < n_a;
            assert_eq!(in_a, l.j < n_a, "links must not span bodies");
        }
        assert_eq!(scene.spacing_hint(), 0.005);
    }

    #[test]
    fn invalid_params_name_the_body() {
        let sample = box_sample(Vec3::new(0.02, 0.01, 0.01), 0.005);
        let mut bad = params(0.005);
        bad.cluster_radius = 0.001;
        let err = SceneBuilder::new()
            .add_body("thalamus", sample, bad, &[])
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("thalamus"));
    }

    #[test]
    fn empty_builder_is_an_error() {
        assert!(matches!(
            SceneBuilder::new().build(),
            Err(SceneError::NoBodies)
        ));
    }

    #[test]
    fn fully_pinned_body_is_rejected() {
        let sample = box_sample(Vec3::new(0.01, 0.01, 0.01), 0.005);
        assert_eq!(sample.positions.len(), 8);
        let err = SceneBuilder::new()
            .add_body("slab", sample, params(0.005), &Face::ALL)
            .build()
            .unwrap_err();
        assert!(matches!(err, SceneError::FullyPinned { .. }));
    }

    #[test]
    fn slab_and_margin_are_recorded() {
        let sample = box_sample(Vec3::new(0.02, 0.01, 0.01), 0.005);
        let slab = Slab {
            axis: Vec3::x(),
            center: 0.01,
            half_width: 0.0025,
        };
        let scene = SceneBuilder::new()
            .add_body("a", sample, params(0.005), &[])
            .contact_margin(0.0025)
            .measurement_slab(slab)
            .build()
            .unwrap();
        assert_eq!(scene.constraints.contact_margin, 0.0025);
        assert_eq!(scene.slab, Some(slab));
        assert_eq!(scene.constraints.friction, None);
    }
}
