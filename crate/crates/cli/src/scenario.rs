//! Scenario files: a TOML description of bodies, catheter, protocol and
//! measurement, with relative paths resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sim_core::{
    load_mesh, load_structure_params, sample_volume, CatheterRig, ClusterParams, Face,
    ParamRange, ParamSpace, ParticleSample, Protocol, Scene, SceneBuilder, SceneError,
    SimConfig, Slab, Vec3,
};

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    bodies: Vec<BodySpec>,
    catheter: CatheterSpec,
    #[serde(default)]
    contact: ContactSpec,
    #[serde(default)]
    protocol: ProtocolSpec,
    #[serde(default)]
    solver: SolverSpec,
    measurement: MeasurementSpec,
    calibration: Option<CalibrationSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BodySpec {
    name: String,
    mesh: PathBuf,
    particle_spacing: Option<f64>,
    params_table: Option<PathBuf>,
    structure: Option<String>,
    cluster_spacing_radius: Option<f64>,
    cluster_stiffness: Option<f64>,
    link_radius: Option<f64>,
    link_stiffness: Option<f64>,
    #[serde(default)]
    pinned_faces: Vec<Face>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatheterSpec {
    entry: [f64; 3],
    direction: [f64; 3],
    speed: f64,
    radius: f64,
    shaft_length: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactSpec {
    margin: Option<f64>,
    friction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolSpec {
    depth_max: Option<f64>,
    sample_interval: Option<f64>,
    insertions: Option<usize>,
    noise_amplitude: Option<f64>,
    seed: Option<u64>,
    speed_limit_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSpec {
    dt: Option<f64>,
    iterations: Option<usize>,
    substeps: Option<usize>,
    gravity: Option<[f64; 3]>,
    damping: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementSpec {
    slab_axis: [f64; 3],
    slab_center: f64,
    slab_half_width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationSpec {
    cluster_spacing_radius: RangeSpec,
    cluster_stiffness: RangeSpec,
    link_radius: RangeSpec,
    link_stiffness: RangeSpec,
    budget: usize,
    reference: PathBuf,
}

/// A parameter axis: a single value pins it, a two-element array searches
/// the closed interval.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum RangeSpec {
    Point(f64),
    Interval([f64; 2]),
}

impl RangeSpec {
    fn to_range(self) -> ParamRange {
        match self {
            RangeSpec::Point(v) => ParamRange::point(v),
            RangeSpec::Interval([min, max]) => ParamRange { min, max },
        }
    }
}

/// One body with its volume sampling done and parameters resolved.
#[derive(Debug, Clone)]
pub struct LoadedBody {
    pub name: String,
    pub sample: ParticleSample,
    pub params: ClusterParams,
    pub pinned_faces: Vec<Face>,
}

#[derive(Debug, Clone)]
pub struct CalibrationSetup {
    pub space: ParamSpace,
    pub budget: usize,
    pub reference_path: PathBuf,
}

/// A scenario ready to simulate. Volume sampling happens once at load time;
/// rebuilding scenes (for repeated insertions or calibration candidates)
/// reuses the cached particles.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub name: String,
    pub bodies: Vec<LoadedBody>,
    pub rig: CatheterRig,
    pub config: SimConfig,
    pub protocol: Protocol,
    pub slab: Slab,
    pub contact_margin: f64,
    pub friction: Option<f64>,
    pub calibration: Option<CalibrationSetup>,
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ScenarioFile = toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        let fail = |message: String| CliError::Scenario {
            path: path.to_path_buf(),
            message,
        };
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        if file.bodies.is_empty() {
            return Err(fail("scenario defines no bodies".into()));
        }
        let mut bodies = Vec::with_capacity(file.bodies.len());
        for spec in &file.bodies {
            if bodies.iter().any(|b: &LoadedBody| b.name == spec.name) {
                return Err(fail(format!("body {:?} is defined twice", spec.name)));
            }
            let (params, spacing) = resolve_params(spec, &dir, &fail)?;
            if !(spacing > 0.0 && spacing.is_finite()) {
                return Err(fail(format!(
                    "body {:?}: particle_spacing must be positive, got {spacing}",
                    spec.name
                )));
            }
            let mesh = load_mesh(&dir.join(&spec.mesh))?;
            let sample = sample_volume(&mesh, spacing)?;
            bodies.push(LoadedBody {
                name: spec.name.clone(),
                sample,
                params,
                pinned_faces: spec.pinned_faces.clone(),
            });
        }

        let c = &file.catheter;
        let direction = Vec3::new(c.direction[0], c.direction[1], c.direction[2]);
        if !(direction.norm() > 0.0 && direction.norm().is_finite()) {
            return Err(fail("catheter direction must be a nonzero vector".into()));
        }
        if !(c.speed > 0.0) {
            return Err(fail(format!("catheter speed must be positive, got {}", c.speed)));
        }
        if !(c.radius > 0.0) {
            return Err(fail(format!("catheter radius must be positive, got {}", c.radius)));
        }
        let shaft_length = c.shaft_length.unwrap_or(0.3);
        if !(shaft_length > 0.0) {
            return Err(fail(format!(
                "catheter shaft_length must be positive, got {shaft_length}"
            )));
        }
        let rig = CatheterRig::new(
            Vec3::new(c.entry[0], c.entry[1], c.entry[2]),
            direction,
            c.speed,
            c.radius,
            shaft_length,
        );

        let spacing_max = bodies
            .iter()
            .map(|b| b.sample.spacing)
            .fold(f64::NEG_INFINITY, f64::max);
        let contact_margin = file.contact.margin.unwrap_or(0.5 * spacing_max);
        if !(contact_margin >= 0.0 && contact_margin.is_finite()) {
            return Err(fail(format!(
                "contact margin must be non-negative, got {contact_margin}"
            )));
        }
        if let Some(mu) = file.contact.friction {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(fail(format!(
                    "contact friction must be non-negative, got {mu}"
                )));
            }
        }

        let slab_axis = Vec3::new(
            file.measurement.slab_axis[0],
            file.measurement.slab_axis[1],
            file.measurement.slab_axis[2],
        );
        if !(slab_axis.norm() > 0.0 && slab_axis.norm().is_finite()) {
            return Err(fail("measurement slab_axis must be a nonzero vector".into()));
        }
        let half_width = file
            .measurement
            .slab_half_width
            .unwrap_or(0.5 * spacing_max);
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(fail(format!(
                "measurement slab_half_width must be positive, got {half_width}"
            )));
        }
        let slab = Slab {
            axis: slab_axis.normalize(),
            center: file.measurement.slab_center,
            half_width,
        };

        let defaults = Protocol::default();
        let p = &file.protocol;
        let protocol = Protocol {
            depth_max: p.depth_max.unwrap_or(defaults.depth_max),
            sample_interval: p.sample_interval.unwrap_or(defaults.sample_interval),
            insertions: p.insertions.unwrap_or(defaults.insertions),
            noise_amplitude: p.noise_amplitude.unwrap_or(defaults.noise_amplitude),
            seed: p.seed.unwrap_or(defaults.seed),
            speed_limit_factor: p.speed_limit_factor.unwrap_or(defaults.speed_limit_factor),
        };

        let defaults = SimConfig::default();
        let s = &file.solver;
        let config = SimConfig {
            dt: s.dt.unwrap_or(defaults.dt),
            solver_iterations: s.iterations.unwrap_or(defaults.solver_iterations),
            substeps: s.substeps.unwrap_or(defaults.substeps),
            gravity: s
                .gravity
                .map(|g| Vec3::new(g[0], g[1], g[2]))
                .unwrap_or(defaults.gravity),
            damping: s.damping.unwrap_or(defaults.damping),
        };

        let calibration = match &file.calibration {
            None => None,
            Some(spec) => {
                if spec.budget == 0 {
                    return Err(fail("calibration budget must be at least 1".into()));
                }
                Some(CalibrationSetup {
                    space: ParamSpace {
                        cluster_spacing_radius: spec.cluster_spacing_radius.to_range(),
                        cluster_stiffness: spec.cluster_stiffness.to_range(),
                        link_radius: spec.link_radius.to_range(),
                        link_stiffness: spec.link_stiffness.to_range(),
                    },
                    budget: spec.budget,
                    reference_path: dir.join(&spec.reference),
                })
            }
        };

        let name = file.name.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into())
        });

        Ok(Self {
            name,
            bodies,
            rig,
            config,
            protocol,
            slab,
            contact_margin,
            friction: file.contact.friction,
            calibration,
        })
    }

    /// Builds the scene at the parameters given in the file.
    pub fn scene(&self) -> Result<Scene, SceneError> {
        self.scene_impl(None)
    }

    /// Builds the scene with every body's cluster and link parameters
    /// replaced by a calibration candidate.
    pub fn scene_with(&self, params: &ClusterParams) -> Result<Scene, SceneError> {
        self.scene_impl(Some(params))
    }

    fn scene_impl(&self, overridden: Option<&ClusterParams>) -> Result<Scene, SceneError> {
        let mut builder = SceneBuilder::new()
            .contact_margin(self.contact_margin)
            .friction(self.friction)
            .measurement_slab(self.slab);
        for body in &self.bodies {
            builder = builder.add_body(
                &body.name,
                body.sample.clone(),
                *overridden.unwrap_or(&body.params),
                &body.pinned_faces,
            );
        }
        builder.build()
    }
}

fn resolve_params(
    spec: &BodySpec,
    dir: &Path,
    fail: &impl Fn(String) -> CliError,
) -> Result<(ClusterParams, f64), CliError> {
    let inline = [
        spec.cluster_spacing_radius,
        spec.cluster_stiffness,
        spec.link_radius,
        spec.link_stiffness,
    ];
    let from_table = spec.params_table.is_some() || spec.structure.is_some();
    if from_table {
        let (Some(table_path), Some(structure)) = (&spec.params_table, &spec.structure) else {
            return Err(fail(format!(
                "body {:?}: params_table and structure go together",
                spec.name
            )));
        };
        if inline.iter().any(Option::is_some) {
            return Err(fail(format!(
                "body {:?}: inline cluster or link parameters conflict with params_table",
                spec.name
            )));
        }
        let table = load_structure_params(&dir.join(table_path))?;
        let row = table.get(structure)?;
        let spacing = spec.particle_spacing.unwrap_or(row.particle_spacing);
        Ok((row.cluster_params(), spacing))
    } else {
        let [Some(spacing_radius), Some(cluster_stiffness), Some(link_radius), Some(link_stiffness)] =
            inline
        else {
            return Err(fail(format!(
                "body {:?}: set params_table with structure, or all of \
                 cluster_spacing_radius, cluster_stiffness, link_radius, link_stiffness",
                spec.name
            )));
        };
        let Some(spacing) = spec.particle_spacing else {
            return Err(fail(format!(
                "body {:?}: particle_spacing is required with inline parameters",
                spec.name
            )));
        };
        Ok((
            ClusterParams {
                cluster_spacing: spacing_radius,
                cluster_radius: spacing_radius,
                cluster_stiffness,
                link_radius,
                link_stiffness,
            },
            spacing,
        ))
    }
}
