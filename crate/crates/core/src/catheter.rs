//! Kinematic catheter: a capsule swept along a straight insertion axis, plus
//! the contact projection that keeps particles outside it.
//!
//! The catheter is infinitely stiff and massless from the tissue's point of
//! view: contacts move particles only. Penetrating particles are pushed to
//! the capsule surface along the radial direction from the shaft axis, so
//! the axial coordinate of a mid-shaft contact is preserved.

use crate::Vec3;

/// Distance below which a particle is considered to sit exactly on the
/// capsule axis and the radial direction is undefined.
const AXIS_EPS: f64 = 1e-12;

/// A capsule at one instant: the segment from `tail` to `tip` inflated by
/// `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapsulePose {
    pub tail: Vec3,
    pub tip: Vec3,
    pub radius: f64,
}

impl CapsulePose {
    /// Closest point on the tail-tip segment to `p`.
    pub fn closest_axis_point(&self, p: &Vec3) -> Vec3 {
        let axis = self.tip - self.tail;
        let len_sq = axis.norm_squared();
        if len_sq <= AXIS_EPS * AXIS_EPS {
            return self.tail;
        }
        let t = ((p - self.tail).dot(&axis) / len_sq).clamp(0.0, 1.0);
        self.tail + axis * t
    }

    /// Signed clearance: distance from the capsule surface, negative inside.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        (p - self.closest_axis_point(p)).norm() - self.radius
    }

    fn axis_direction(&self) -> Vec3 {
        let axis = self.tip - self.tail;
        let len = axis.norm();
        if len <= AXIS_EPS {
            Vec3::x()
        } else {
            axis / len
        }
    }
}

/// Straight-line insertion trajectory for a capsule of fixed radius.
///
/// The tip starts at `entry` and advances along `direction` at `speed`; the
/// shaft trails behind the tip so the capsule always spans the entry hole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatheterRig {
    pub entry: Vec3,
    /// Unit insertion direction.
    pub direction: Vec3,
    /// Advance rate in metres per second.
    pub speed: f64,
    pub radius: f64,
    /// Shaft length behind the tip.
    pub shaft_length: f64,
}

impl CatheterRig {
    pub fn new(entry: Vec3, direction: Vec3, speed: f64, radius: f64, shaft_length: f64) -> Self {
        let norm = direction.norm();
        assert!(
            norm > 0.0 && norm.is_finite(),
            "insertion direction must be a nonzero finite vector"
        );
        assert!(radius > 0.0, "catheter radius must be positive");
        assert!(shaft_length > 0.0, "shaft length must be positive");
        Self {
            entry,
            direction: direction / norm,
            speed,
            radius,
            shaft_length,
        }
    }

    /// Tip depth along the insertion axis at `time` seconds.
    pub fn depth_at(&self, time: f64) -> f64 {
        self.speed * time
    }

    pub fn tip_at(&self, time: f64) -> Vec3 {
        self.entry + self.direction * self.depth_at(time)
    }

    pub fn pose_at(&self, time: f64) -> CapsulePose {
        let tip = self.tip_at(time);
        CapsulePose {
            tail: tip - self.direction * self.shaft_length,
            tip,
            radius: self.radius,
        }
    }
}

/// Result of resolving one particle against one capsule.
#[derive(Debug, Clone, Copy)]
pub struct ContactResolution {
    /// Corrected particle position, on or outside the inflated surface.
    pub position: Vec3,
    /// Penetration depth that was removed.
    pub depth: f64,
    /// The particle sat on the capsule axis and was ejected along a fixed
    /// perpendicular rather than a true radial direction.
    pub on_axis: bool,
}

/// Aggregate contact counts from one projection pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContactReport {
    pub contacts: usize,
    pub on_axis_contacts: usize,
    pub max_depth: f64,
}

/// Resolves one particle against one capsule.
///
/// Returns `None` when the particle is already clear of the capsule inflated
/// by `margin`. Otherwise the particle is moved to the inflated surface along
/// the radial direction. With `friction` set, tangential motion accumulated
/// since `step_start` is clamped Coulomb-style against the removed
/// penetration depth; the position is re-projected afterwards so friction can
/// never reintroduce penetration.
pub fn resolve_capsule_contact(
    pose: &CapsulePose,
    predicted: Vec3,
    step_start: Vec3,
    margin: f64,
    friction: Option<f64>,
) -> Option<ContactResolution> {
    let clearance = pose.radius + margin;
    let anchor = pose.closest_axis_point(&predicted);
    let radial = predicted - anchor;
    let dist = radial.norm();
    if dist >= clearance {
        return None;
    }

    let (normal, on_axis) = if dist > AXIS_EPS {
        (radial / dist, false)
    } else {
        (perpendicular_to(&pose.axis_direction()), true)
    };
    let depth = clearance - dist;
    let mut position = anchor + normal * clearance;

    if let Some(mu) = friction {
        let displacement = position - step_start;
        let normal_part = normal * displacement.dot(&normal);
        let tangential = displacement - normal_part;
        let tangential_len = tangential.norm();
        let limit = mu * depth;
        if tangential_len > 0.0 {
            let kept = if tangential_len <= limit {
                Vec3::zeros()
            } else {
                tangential * (1.0 - limit / tangential_len)
            };
            position = step_start + normal_part + kept;
            // The clamp moves the particle along the surface; push it back
            // out if the new spot happens to intersect the capsule.
            if let Some(fixup) = resolve_capsule_contact(pose, position, step_start, margin, None)
            {
                position = fixup.position;
            }
        }
    }

    Some(ContactResolution {
        position,
        depth,
        on_axis,
    })
}

/// Pushes every penetrating particle in `positions` to the capsule surface.
/// Pinned particles (zero inverse mass) are skipped.
pub fn project_collisions(
    pose: &CapsulePose,
    positions: &mut [Vec3],
    step_start: &[Vec3],
    inv_mass: &[f64],
    margin: f64,
    friction: Option<f64>,
) -> ContactReport {
    let mut report = ContactReport::default();
    for i in 0..positions.len() {
        if inv_mass[i] == 0.0 {
            continue;
        }
        if let Some(resolution) =
            resolve_capsule_contact(pose, positions[i], step_start[i], margin, friction)
        {
            positions[i] = resolution.position;
            report.contacts += 1;
            report.on_axis_contacts += usize::from(resolution.on_axis);
            report.max_depth = report.max_depth.max(resolution.depth);
        }
    }
    report
}

/// Deterministic unit vector perpendicular to `axis`: cross with the
/// coordinate axis least aligned with it.
pub(crate) fn perpendicular_to(axis: &Vec3) -> Vec3 {
    let abs = axis.abs();
    let seed = if abs.x <= abs.y && abs.x <= abs.z {
        Vec3::x()
    } else if abs.y <= abs.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    axis.cross(&seed).normalize()
}
