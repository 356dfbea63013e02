//! Deformation metrics and insertion records.
//!
//! A run is summarized as a sequence of frames: tip penetration depth plus
//! tissue displacement statistics (slab average, center of mass) and contact
//! counts. Frames serialize to CSV with shortest round-trip float formatting,
//! so identical runs produce byte-identical files. Curve comparison resamples
//! the simulated displacement-versus-depth curve onto the reference depth
//! grid and reports a normalized RMS error in percent.

use crate::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no particles fall inside the measurement slab")]
    EmptySlab,
    #[error("{which} curve is empty")]
    EmptyCurve { which: &'static str },
    #[error("simulated curve depths must be non-decreasing (index {index})")]
    UnsortedCurve { index: usize },
    #[error("curves share no depth overlap (sim [{sim_min}, {sim_max}], ref [{ref_min}, {ref_max}])")]
    NoOverlap {
        sim_min: f64,
        sim_max: f64,
        ref_min: f64,
        ref_max: f64,
    },
    #[error(
        "probe {probe} at ({x}, {y}, {z}) is {gap} from the nearest particle \
         (limit {limit}); the probe line misses the tissue"
    )]
    ProbeTooFar {
        probe: usize,
        x: f64,
        y: f64,
        z: f64,
        gap: f64,
        limit: f64,
    },
    #[error("record I/O failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Tip travel distance from the insertion start pose.
pub fn penetration_depth(tip_initial: &Vec3, tip_current: &Vec3) -> f64 {
    (tip_current - tip_initial).norm()
}

/// Axis-aligned measurement slab: particles whose rest position projects
/// onto `axis` within `half_width` of `center` belong to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    /// Unit slab normal.
    pub axis: Vec3,
    /// Slab center coordinate along `axis`, in metres.
    pub center: f64,
    pub half_width: f64,
}

impl Slab {
    /// Indices of particles inside the slab, judged by rest position.
    pub fn select(&self, rest: &[Vec3]) -> Vec<usize> {
        rest.iter()
            .enumerate()
            .filter(|(_, p)| (p.dot(&self.axis) - self.center).abs() <= self.half_width)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Mean displacement magnitude over the slab membership.
pub fn slab_average_displacement(
    slab: &Slab,
    rest: &[Vec3],
    current: &[Vec3],
) -> Result<f64, MetricsError> {
    let members = slab.select(rest);
    if members.is_empty() {
        return Err(MetricsError::EmptySlab);
    }
    let total: f64 = members
        .iter()
        .map(|&i| (current[i] - rest[i]).norm())
        .sum();
    Ok(total / members.len() as f64)
}

/// Center-of-mass displacement vector (uniform unit masses).
pub fn com_displacement(rest: &[Vec3], current: &[Vec3]) -> Vec3 {
    debug_assert_eq!(rest.len(), current.len());
    debug_assert!(!rest.is_empty());
    let rest_com: Vec3 = rest.iter().sum::<Vec3>() / rest.len() as f64;
    let current_com: Vec3 = current.iter().sum::<Vec3>() / current.len() as f64;
    current_com - rest_com
}

/// The instrument shaft as a probing line: probes surround it at the hole
/// radius.
#[derive(Debug, Clone, Copy)]
pub struct ProbeLine {
    /// Entry point of the shaft.
    pub origin: Vec3,
    /// Unit direction of advance.
    pub axis: Vec3,
    /// Radial distance of the probes from the axis.
    pub radius: f64,
}

/// One probe: the queried location and the particle answering for it.
#[derive(Debug, Clone, Copy)]
pub struct ProbePoint {
    pub target: Vec3,
    pub particle: usize,
    /// Rest-space distance between target and particle.
    pub gap: f64,
    /// Displacement magnitude of the answering particle.
    pub displacement: f64,
}

/// The twenty hole-perimeter probes: five stations along the inserted length
/// times four sides around the shaft.
#[derive(Debug, Clone)]
pub struct PerimeterSamples {
    pub points: Vec<ProbePoint>,
    pub mean_displacement: f64,
}

const PERIMETER_STATIONS: usize = 5;

/// Samples tissue displacement around the shaft between entry and `depth`.
///
/// Stations sit at `depth * j / 5` for `j = 1..=5`; each station probes the
/// four perpendicular directions at the hole radius. A probe answers with
/// the nearest particle in rest space; a gap above `2 * spacing` means the
/// probe line runs outside the tissue and is an error.
pub fn sample_hole_perimeter(
    rest: &[Vec3],
    current: &[Vec3],
    line: &ProbeLine,
    depth: f64,
    spacing: f64,
) -> Result<PerimeterSamples, MetricsError> {
    let axis = line.axis.normalize();
    let u = crate::catheter::perpendicular_to(&axis);
    let v = axis.cross(&u);
    let sides = [u, -u, v, -v];
    let limit = 2.0 * spacing;

    let mut points = Vec::with_capacity(4 * PERIMETER_STATIONS);
    let mut total = 0.0;
    for station in 1..=PERIMETER_STATIONS {
        let along = depth * station as f64 / PERIMETER_STATIONS as f64;
        let on_axis = line.origin + axis * along;
        for side in sides {
            let target = on_axis + side * line.radius;
            let (particle, gap) = nearest_particle(rest, &target);
            if gap > limit {
                return Err(MetricsError::ProbeTooFar {
                    probe: points.len(),
                    x: target.x,
                    y: target.y,
                    z: target.z,
                    gap,
                    limit,
                });
            }
            let displacement = (current[particle] - rest[particle]).norm();
            total += displacement;
            points.push(ProbePoint {
                target,
                particle,
                gap,
                displacement,
            });
        }
    }
    let mean_displacement = total / points.len() as f64;
    Ok(PerimeterSamples {
        points,
        mean_displacement,
    })
}

fn nearest_particle(rest: &[Vec3], target: &Vec3) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, p) in rest.iter().enumerate() {
        let d = (p - target).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Curve comparison summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Mismatch {
    /// Normalized RMS error in percent: per-point errors are divided by the
    /// peak reference magnitude over the overlap.
    pub score_percent: f64,
    /// Unnormalized RMS error in the curve's units.
    pub rmse: f64,
    /// Depth overlap the score was computed on.
    pub overlap_min: f64,
    pub overlap_max: f64,
    /// Reference samples inside the overlap.
    pub samples: usize,
}

/// Floor for the normalization denominator, so an all-zero reference still
/// yields a finite score that grows with simulated magnitude.
const MISMATCH_DENOM_FLOOR: f64 = 1e-12;

/// Scores a simulated displacement-versus-depth curve against a reference.
///
/// The simulated curve is linearly resampled at each reference depth inside
/// the depth overlap of the two curves; reference points outside the overlap
/// are ignored. Both curves are `(depth, value)` pairs; the simulated one
/// must be sorted by depth.
pub fn mismatch_score(sim: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<Mismatch, MetricsError> {
    if sim.is_empty() {
        return Err(MetricsError::EmptyCurve { which: "simulated" });
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptyCurve { which: "reference" });
    }
    for (index, w) in sim.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            return Err(MetricsError::UnsortedCurve { index: index + 1 });
        }
    }
    let sim_min = sim[0].0;
    let sim_max = sim[sim.len() - 1].0;
    let (ref_min, ref_max) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(d, _)| {
            (lo.min(d), hi.max(d))
        });
    let lo = sim_min.max(ref_min);
    let hi = sim_max.min(ref_max);
    if lo > hi {
        return Err(MetricsError::NoOverlap {
            sim_min,
            sim_max,
            ref_min,
            ref_max,
        });
    }

    let in_overlap: Vec<&(f64, f64)> = reference
        .iter()
        .filter(|(d, _)| (lo..=hi).contains(d))
        .collect();
    if in_overlap.is_empty() {
        return Err(MetricsError::NoOverlap {
            sim_min,
            sim_max,
            ref_min,
            ref_max,
        });
    }

    let peak = in_overlap
        .iter()
        .map(|(_, v)| v.abs())
        .fold(0.0f64, f64::max)
        .max(MISMATCH_DENOM_FLOOR);

    let mut sq_norm = 0.0;
    let mut sq_raw = 0.0;
    for &&(depth, value) in &in_overlap {
        let simulated = interpolate(sim, depth);
        let raw = simulated - value;
        sq_raw += raw * raw;
        let rel = raw.abs() / peak;
        sq_norm += rel * rel;
    }
    let n = in_overlap.len() as f64;
    Ok(Mismatch {
        score_percent: 100.0 * (sq_norm / n).sqrt(),
        rmse: (sq_raw / n).sqrt(),
        overlap_min: lo,
        overlap_max: hi,
        samples: in_overlap.len(),
    })
}

/// Linear interpolation on a depth-sorted curve; `d` must lie within range.
fn interpolate(curve: &[(f64, f64)], d: f64) -> f64 {
    match curve.binary_search_by(|(x, _)| x.partial_cmp(&d).unwrap()) {
        Ok(i) => curve[i].1,
        Err(0) => curve[0].1,
        Err(i) if i == curve.len() => curve[curve.len() - 1].1,
        Err(i) => {
            let (d0, v0) = curve[i - 1];
            let (d1, v1) = curve[i];
            if d1 == d0 {
                v0
            } else {
                v0 + (v1 - v0) * (d - d0) / (d1 - d0)
            }
        }
    }
}

/// One record row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordFrame {
    pub time: f64,
    pub depth: f64,
    /// Mean displacement magnitude over the measurement slab.
    pub slab_displacement: f64,
    /// Center-of-mass displacement magnitude.
    pub com_displacement: f64,
    /// Center-of-mass displacement component along the insertion axis.
    pub com_axial: f64,
    pub contacts: u64,
}

/// A full insertion run, one frame per recorded depth interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsertionRecord {
    pub frames: Vec<RecordFrame>,
}

impl InsertionRecord {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(writer);
        for frame in &self.frames {
            w.serialize(frame)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, MetricsError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut frames = Vec::new();
        for row in r.deserialize() {
            frames.push(row?);
        }
        Ok(Self { frames })
    }

    /// Displacement-versus-depth curve for mismatch scoring.
    pub fn to_curve(&self) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|f| (f.depth, f.slab_displacement))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn depth_is_tip_travel() {
        let t0 = Vec3::new(0.0, 0.02, 0.02);
        let t1 = Vec3::new(0.0314, 0.02, 0.02);
        assert!((penetration_depth(&t0, &t1) - 0.0314).abs() < 1e-15);
        assert_eq!(penetration_depth(&t0, &t0), 0.0);
    }

    #[test]
    fn slab_selects_by_rest_position_inclusively() {
        let rest = grid(5, 1.0);
        let slab = Slab {
            axis: Vec3::x(),
            center: 2.0,
            half_width: 1.0,
        };
        let members = slab.select(&rest);
        // Planes x = 1, 2, 3: boundary particles count.
        assert_eq!(members.len(), 75);
    }

    #[test]
    fn slab_average_is_exact_for_known_motion() {
        let rest = grid(5, 1.0);
        let slab = Slab {
            axis: Vec3::x(),
            center: 2.0,
            half_width: 0.5,
        };
        let mut current = rest.clone();
        for (i, p) in rest.iter().enumerate() {
            if (p.x - 2.0).abs() <= 0.5 {
                current[i] += Vec3::new(0.0, 0.003, 0.004);
            }
        }
        let mean = slab_average_displacement(&slab, &rest, &current).unwrap();
        assert!((mean - 0.005).abs() < 1e-15);
    }

    #[test]
    fn empty_slab_is_an_error() {
        let rest = grid(3, 1.0);
        let slab = Slab {
            axis: Vec3::x(),
            center: 50.0,
            half_width: 0.1,
        };
        assert!(matches!(
            slab_average_displacement(&slab, &rest, &rest),
            Err(MetricsError::EmptySlab)
        ));
    }

    #[test]
    fn com_displacement_is_mean_motion() {
        let rest = grid(3, 1.0);
        let mut current = rest.clone();
        current[0] += Vec3::new(0.27, 0.0, 0.0);
        let com = com_displacement(&rest, &current);
        assert!((com - Vec3::new(0.01, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn metrics_are_rigid_translation_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rest = grid(4, 0.01);
        let slab = Slab {
            axis: Vec3::x(),
            center: 0.015,
            half_width: 0.005,
        };
        for _ in 0..100 {
            let t = Vec3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            );
            let current: Vec<Vec3> = rest.iter().map(|p| p + t).collect();
            let mean = slab_average_displacement(&slab, &rest, &current).unwrap();
            assert!((mean - t.norm()).abs() < 1e-12);
            let com = com_displacement(&rest, &current);
            assert!((com - t).norm() < 1e-12);
        }
    }

    #[test]
    fn perimeter_probes_cover_four_sides_of_five_stations() {
        let rest = grid(9, 0.25);
        let current = rest.clone();
        let line = ProbeLine {
            origin: Vec3::new(0.0, 1.0, 1.0),
            axis: Vec3::x(),
            radius: 0.3,
        };
        let samples = sample_hole_perimeter(&rest, &current, &line, 1.5, 0.25).unwrap();
        assert_eq!(samples.points.len(), 20);
        assert_eq!(samples.mean_displacement, 0.0);
        for p in &samples.points {
            let along = (p.target - line.origin).dot(&Vec3::x());
            assert!(along > 0.0 && along <= 1.5 + 1e-12);
            let radial = p.target - line.origin - Vec3::x() * along;
            assert!((radial.norm() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn perimeter_probes_report_uniform_radial_motion_exactly() {
        let rest = grid(9, 0.25);
        let line = ProbeLine {
            origin: Vec3::new(0.0, 1.0, 1.0),
            axis: Vec3::x(),
            radius: 0.3,
        };
        // Every particle moves radially away from the shaft by 0.017.
        let push = 0.017;
        let current: Vec<Vec3> = rest
            .iter()
            .map(|p| {
                let along = (p - line.origin).dot(&Vec3::x());
                let radial = p - line.origin - Vec3::x() * along;
                if radial.norm() > 1e-9 {
                    p + radial.normalize() * push
                } else {
                    *p
                }
            })
            .collect();
        let samples = sample_hole_perimeter(&rest, &current, &line, 1.5, 0.25).unwrap();
        for p in &samples.points {
            assert!((p.displacement - push).abs() < 1e-12);
        }
        assert!((samples.mean_displacement - push).abs() < 1e-12);
    }

    #[test]
    fn probes_far_from_tissue_are_an_error() {
        let rest = grid(3, 0.1);
        let line = ProbeLine {
            origin: Vec3::new(10.0, 0.0, 0.0),
            axis: Vec3::x(),
            radius: 0.05,
        };
        match sample_hole_perimeter(&rest, &rest, &line, 1.0, 0.1) {
            Err(MetricsError::ProbeTooFar { gap, limit, .. }) => {
                assert!(gap > limit);
                assert_eq!(limit, 0.2);
            }
            other => panic!("expected probe gap error, got {other:?}"),
        }
    }

    #[test]
    fn identical_curves_score_zero() {
        let curve: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64).sin())).collect();
        let m = mismatch_score(&curve, &curve).unwrap();
        assert_eq!(m.score_percent, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.samples, 50);
    }

    #[test]
    fn ten_percent_inflation_scores_as_computed_by_hand() {
        let reference = vec![(1.0, 1.0), (2.0, 2.0)];
        let sim = vec![(1.0, 1.1), (2.0, 2.2)];
        let m = mismatch_score(&sim, &reference).unwrap();
        // Errors 0.1 and 0.2 against peak 2: rel errors 0.05 and 0.1,
        // RMS = sqrt(0.00625) ~ 7.906 percent.
        assert!((m.score_percent - 7.905694150420948).abs() < 1e-9);
        assert!((m.rmse - 0.025f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn resampling_is_exact_on_linear_curves() {
        let sim: Vec<(f64, f64)> = (0..100).map(|i| (0.03 * i as f64, 0.3 * 0.03 * i as f64)).collect();
        let reference: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let d = 0.17 + 0.35 * i as f64;
                (d, 0.3 * d)
            })
            .collect();
        let m = mismatch_score(&sim, &reference).unwrap();
        assert!(m.score_percent < 1e-9);
    }

    #[test]
    fn reference_outside_overlap_is_ignored_and_disjoint_is_an_error() {
        let sim = vec![(0.0, 0.0), (1.0, 1.0)];
        let reference = vec![(0.5, 0.5), (3.0, 9.9)];
        let m = mismatch_score(&sim, &reference).unwrap();
        assert_eq!(m.samples, 1);
        assert!(m.score_percent < 1e-12);

        let far = vec![(5.0, 1.0), (6.0, 1.0)];
        assert!(matches!(
            mismatch_score(&sim, &far),
            Err(MetricsError::NoOverlap { .. })
        ));
    }

    #[test]
    fn zero_reference_scores_grow_with_simulated_magnitude() {
        let reference = vec![(0.0, 0.0), (1.0, 0.0)];
        let small = vec![(0.0, 1e-6), (1.0, 1e-6)];
        let large = vec![(0.0, 2e-6), (1.0, 2e-6)];
        let m_small = mismatch_score(&small, &reference).unwrap();
        let m_large = mismatch_score(&large, &reference).unwrap();
        assert!(m_small.score_percent.is_finite());
        assert!(m_large.score_percent > m_small.score_percent);
    }

    #[test]
    fn unsorted_sim_curve_is_rejected() {
        let sim = vec![(0.0, 0.0), (2.0, 1.0), (1.0, 4.0)];
        assert!(matches!(
            mismatch_score(&sim, &[(0.5, 0.2)]),
            Err(MetricsError::UnsortedCurve { index: 2 })
        ));
    }

    #[test]
    fn records_round_trip_and_rewrite_identically() {
        let record = InsertionRecord {
            frames: vec![
                RecordFrame {
                    time: 0.0,
                    depth: 0.0,
                    slab_displacement: 0.0,
                    com_displacement: 0.0,
                    com_axial: 0.0,
                    contacts: 0,
                },
                RecordFrame {
                    time: 0.68,
                    depth: 0.00034,
                    slab_displacement: 1.25e-5,
                    com_displacement: 3.7e-6,
                    com_axial: -2.1e-6,
                    contacts: 14,
                },
            ],
        };
        let mut first = Vec::new();
        record.write_csv(&mut first).unwrap();
        let parsed = InsertionRecord::read_csv(first.as_slice()).unwrap();
        assert_eq!(parsed, record);
        let mut second = Vec::new();
        parsed.write_csv(&mut second).unwrap();
        assert_eq!(first, second, "serialization must be byte-stable");
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("time,depth,slab_displacement,com_displacement,com_axial,contacts"));
    }

    #[test]
    fn curve_extraction_uses_depth_and_slab_columns() {
        let record = InsertionRecord {
            frames: vec![RecordFrame {
                time: 1.0,
                depth: 0.005,
                slab_displacement: 0.0007,
                com_displacement: 0.1,
                com_axial: 0.1,
                contacts: 3,
            }],
        };
        assert_eq!(record.to_curve(), vec![(0.005, 0.0007)]);
    }
}
