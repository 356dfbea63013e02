//! Triangle meshes and interior particle sampling.
//!
//! Meshes come from a minimal Wavefront OBJ reader (positions and faces
//! only). Particle sampling fills the mesh interior with a regular grid of
//! cell centers: candidates sit at `bbox_min + (k + 1/2) * spacing` on each
//! axis and are kept when they pass a ray-parity interior test. Cell centers
//! keep every particle at least half a spacing away from the bounding box,
//! and reproduce the expected counts for analytic shapes (a 50 x 17.5 x 17.5
//! box at 2.5 spacing yields 20 x 7 x 7 = 980 particles).

use crate::Vec3;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot read mesh {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed OBJ at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("mesh {path} contains no triangles")]
    EmptyMesh { path: PathBuf },
    #[error(
        "particle spacing {spacing} produced no interior samples (mesh extent {extent:?}); \
         use a finer spacing"
    )]
    NoInteriorSamples { spacing: f64, extent: [f64; 3] },
}

/// Indexed triangle mesh in metres.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        (min, max)
    }

    /// Signed volume via the divergence theorem; positive for outward-wound
    /// closed meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (
                    self.vertices[t[0]],
                    self.vertices[t[1]],
                    self.vertices[t[2]],
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

/// Axis-aligned box as a closed, outward-wound triangle mesh.
pub fn make_box_mesh(min: Vec3, max: Vec3) -> TriangleMesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(min.x, min.y, min.z),
        v(max.x, min.y, min.z),
        v(max.x, max.y, min.z),
        v(min.x, max.y, min.z),
        v(min.x, min.y, max.z),
        v(max.x, min.y, max.z),
        v(max.x, max.y, max.z),
        v(min.x, max.y, max.z),
    ];
    let triangles = vec![
        // z = min, outward normal -z
        [0, 2, 1],
        [0, 3, 2],
        // z = max, outward normal +z
        [4, 5, 6],
        [4, 6, 7],
        // y = min, outward normal -y
        [0, 1, 5],
        [0, 5, 4],
        // y = max, outward normal +y
        [3, 7, 6],
        [3, 6, 2],
        // x = min, outward normal -x
        [0, 4, 7],
        [0, 7, 3],
        // x = max, outward normal +x
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Reads an OBJ file from disk.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh, GeometryError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_obj(&text, path)
}

/// Parses OBJ text: `v` positions and `f` faces; faces with more than three
/// vertices are fan-triangulated, `v/vt/vn` index forms and negative
/// (relative) indices are accepted, everything else is ignored. Triangles
/// that repeat a vertex are dropped.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh, GeometryError> {
    let err = |line: usize, message: String| GeometryError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices: Vec<Vec3> = Vec::new();
    // Faces are checked against the final vertex count, so forward
    // references parse; negative indices resolve against the count so far.
    let mut faces: Vec<(usize, Vec<usize>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut tokens = raw.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in coords.iter_mut() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| err(line_no, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| err(line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut indices = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let parsed: i64 = first
                        .parse()
                        .map_err(|_| err(line_no, format!("bad face index {tok:?}")))?;
                    let resolved = if parsed > 0 {
                        (parsed - 1) as usize
                    } else if parsed < 0 {
                        let from_end = vertices.len() as i64 + parsed;
                        if from_end < 0 {
                            return Err(err(
                                line_no,
                                format!("relative index {parsed} precedes the first vertex"),
                            ));
                        }
                        from_end as usize
                    } else {
                        return Err(err(line_no, "face index 0 is invalid".into()));
                    };
                    indices.push(resolved);
                }
                if indices.len() < 3 {
                    return Err(err(line_no, "face needs at least 3 vertices".into()));
                }
                faces.push((line_no, indices));
            }
            _ => {}
        }
    }

    let mut triangles = Vec::new();
    for (line_no, indices) in faces {
        for &i in &indices {
            if i >= vertices.len() {
                return Err(err(
                    line_no,
                    format!("face index {} exceeds vertex count {}", i + 1, vertices.len()),
                ));
            }
        }
        for k in 1..indices.len() - 1 {
            let tri = [indices[0], indices[k], indices[k + 1]];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                triangles.push(tri);
            }
        }
    }
    if triangles.is_empty() {
        return Err(GeometryError::EmptyMesh {
            path: path.to_path_buf(),
        });
    }
    Ok(TriangleMesh {
        vertices,
        triangles,
    })
}

/// Interior particles sampled from a mesh, with the spacing that produced
/// them.
#[derive(Debug, Clone)]
pub struct ParticleSample {
    pub positions: Vec<Vec3>,
    pub spacing: f64,
}

/// Ray directions for the parity vote: one dominant axis each, tilted by a
/// fixed tiny amount so rays do not run along mesh edges or faces.
const RAY_DIRECTIONS: [[f64; 3]; 3] = [
    [1.0, 1.7e-7, 3.1e-7],
    [2.3e-7, 1.0, 1.3e-7],
    [3.7e-7, 2.9e-7, 1.0],
];

/// Fills the interior of `mesh` with grid cell centers at pitch `spacing`.
///
/// Candidates lie at `bbox_min + (k + 1/2) * spacing` per axis; a candidate
/// is kept when at least two of three perturbed axis rays report an odd
/// crossing count. Deterministic for a given mesh and spacing.
pub fn sample_volume(mesh: &TriangleMesh, spacing: f64) -> Result<ParticleSample, GeometryError> {
    assert!(spacing > 0.0 && spacing.is_finite(), "spacing must be positive");
    let (min, max) = mesh.bounding_box();
    let extent = max - min;
    let counts: [i64; 3] =
        std::array::from_fn(|a| ((extent[a] / spacing) - 0.5 + 1e-9).floor() as i64 + 1);
    if counts.iter().any(|&c| c <= 0) {
        return Err(GeometryError::NoInteriorSamples {
            spacing,
            extent: [extent.x, extent.y, extent.z],
        });
    }

    let mut positions = Vec::new();
    for kx in 0..counts[0] {
        for ky in 0..counts[1] {
            for kz in 0..counts[2] {
                let p = min
                    + Vec3::new(
                        (kx as f64 + 0.5) * spacing,
                        (ky as f64 + 0.5) * spacing,
                        (kz as f64 + 0.5) * spacing,
                    );
                if is_inside(mesh, &p) {
                    positions.push(p);
                }
            }
        }
    }
    if positions.is_empty() {
        return Err(GeometryError::NoInteriorSamples {
            spacing,
            extent: [extent.x, extent.y, extent.z],
        });
    }
    Ok(ParticleSample { positions, spacing })
}

fn is_inside(mesh: &TriangleMesh, p: &Vec3) -> bool {
    let mut votes = 0;
    for d in &RAY_DIRECTIONS {
        let dir = Vec3::new(d[0], d[1], d[2]);
        if crossing_parity_odd(mesh, p, &dir) {
            votes += 1;
        }
    }
    votes >= 2
}

fn crossing_parity_odd(mesh: &TriangleMesh, origin: &Vec3, dir: &Vec3) -> bool {
    let mut crossings = 0usize;
    for t in &mesh.triangles {
        let (a, b, c) = (
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        );
        if ray_hits_triangle(origin, dir, &a, &b, &c) {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

/// Moller-Trumbore intersection, counting strictly forward hits.
fn ray_hits_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-16 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 1e-14
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn obj_path() -> PathBuf {
        PathBuf::from("test.obj")
    }

    /// Watertight lat-long sphere used as an independent sampling target.
    fn uv_sphere(radius: f64, n_lon: usize, n_lat: usize) -> TriangleMesh {
        let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
        for i in 1..n_lat {
            let theta = PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                let phi = 2.0 * PI * j as f64 / n_lon as f64;
                vertices.push(Vec3::new(
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, -radius));
        let south = vertices.len() - 1;
        let ring = |i: usize, j: usize| 1 + (i - 1) * n_lon + (j % n_lon);

        let mut triangles = Vec::new();
        for j in 0..n_lon {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
            triangles.push([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    #[test]
    fn parses_vertices_and_fan_triangulates_quads() {
        let text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n";
        let mesh = parse_obj(text, &obj_path()).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn accepts_negative_relative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        let mesh = parse_obj(text, &obj_path()).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "v 0 0 0\nv 1 0 zero\n";
        match parse_obj(text, &obj_path()) {
            Err(GeometryError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("zero"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "v 0 0 0\nf 1 2 3\n";
        match parse_obj(text, &obj_path()) {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\n";
        let mesh = parse_obj(text, &obj_path()).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
    }

    #[test]
    fn box_mesh_volume_is_positive_and_exact() {
        let mesh = make_box_mesh(Vec3::zeros(), Vec3::new(0.05, 0.0175, 0.0175));
        let expected = 0.05 * 0.0175 * 0.0175;
        assert!((mesh.signed_volume() - expected).abs() < 1e-12);
    }

    #[test]
    fn box_sampling_has_the_analytic_count() {
        let mesh = make_box_mesh(Vec3::zeros(), Vec3::new(0.05, 0.0175, 0.0175));
        let sample = sample_volume(&mesh, 0.0025).unwrap();
        assert_eq!(sample.positions.len(), 20 * 7 * 7);
        assert_eq!(sample.spacing, 0.0025);
        // Cell centers keep half a spacing of clearance from every face.
        for p in &sample.positions {
            assert!(p.x >= 0.00125 - 1e-12 && p.x <= 0.05 - 0.00125 + 1e-12);
            assert!(p.y >= 0.00125 - 1e-12 && p.y <= 0.0175 - 0.00125 + 1e-12);
            assert!(p.z >= 0.00125 - 1e-12 && p.z <= 0.0175 - 0.00125 + 1e-12);
        }
    }

    #[test]
    fn coarse_sphere_sampling_keeps_the_corner_cells() {
        // Sphere of radius 1 sampled at spacing 1: the 2x2x2 candidate grid
        // sits at (+-0.5, +-0.5, +-0.5), all inside (distance ~0.866).
        let mesh = uv_sphere(1.0, 32, 16);
        let sample = sample_volume(&mesh, 1.0).unwrap();
        assert_eq!(sample.positions.len(), 8);
        for p in &sample.positions {
            assert!((p.norm() - 0.75f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn halving_the_spacing_scales_counts_by_about_eight() {
        let mesh = uv_sphere(1.0, 32, 16);
        let coarse = sample_volume(&mesh, 0.25).unwrap().positions.len();
        let fine = sample_volume(&mesh, 0.125).unwrap().positions.len();
        let ratio = fine as f64 / coarse as f64;
        assert!(
            (5.6..=10.4).contains(&ratio),
            "expected ~8x growth, got {ratio} ({coarse} -> {fine})"
        );
        // Sanity: counts approximate the volume fraction of the bounding box.
        let occupancy = coarse as f64 / (8.0f64 / 0.25f64.powi(3));
        assert!((occupancy - PI / 6.0).abs() < 0.08);
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = uv_sphere(0.01, 24, 12);
        let a = sample_volume(&mesh, 0.002).unwrap();
        let b = sample_volume(&mesh, 0.002).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn too_coarse_spacing_is_an_error() {
        let mesh = uv_sphere(1.0, 16, 8);
        match sample_volume(&mesh, 10.0) {
            Err(GeometryError::NoInteriorSamples { spacing, .. }) => assert_eq!(spacing, 10.0),
            other => panic!("expected no-samples error, got {other:?}"),
        }
    }

    #[test]
    fn empty_mesh_is_an_error() {
        assert!(matches!(
            parse_obj("v 0 0 0\n", &obj_path()),
            Err(GeometryError::EmptyMesh { .. })
        ));
    }
}
