//! Structure parameter tables, the insertion experiment runner, and the
//! parameter search that fits simulated displacement curves to a reference.
//!
//! An experiment advances a kinematic catheter through a scene at constant
//! speed, records a displacement-versus-depth curve, and watches for
//! instability: non-finite state aborts inside the solver, and a speed
//! sentinel flags particles moving far faster than the catheter. Calibration
//! wraps the experiment in a two-phase search (coarse grid, then coordinate
//! descent with shrinking steps) over the four cluster and link parameters,
//! scoring each candidate with the normalized curve mismatch.

use crate::catheter::CatheterRig;
use crate::metrics::{
    com_displacement, mismatch_score, penetration_depth, sample_hole_perimeter,
    slab_average_displacement, InsertionRecord, MetricsError, PerimeterSamples, ProbeLine,
    RecordFrame,
};
use crate::pbd::{PbdError, SimConfig, Solver};
use crate::scene::{Scene, SceneError};
use crate::shape_match::ClusterParams;
use crate::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot read structure table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("structure table {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("structure table row {name:?}: {field}={value} {constraint}")]
    InvalidRow {
        name: String,
        field: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("structure table lists {name:?} twice")]
    DuplicateStructure { name: String },
    #[error("structure table is empty")]
    EmptyTable,
    #[error("unknown structure {name:?}; available: {available}")]
    UnknownStructure { name: String, available: String },
    #[error("invalid protocol: {0}")]
    InvalidProtocol(&'static str),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Solver(#[from] PbdError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(
        "simulation unstable at t={time}s: particle speed {max_speed} m/s exceeds \
         {limit} m/s ({factor}x catheter speed)"
    )]
    Unstable {
        time: f64,
        max_speed: f64,
        limit: f64,
        factor: f64,
    },
    #[error("calibration budget must be at least 1")]
    InvalidBudget,
    #[error("parameter range {field}: {message}")]
    InvalidRange {
        field: &'static str,
        message: &'static str,
    },
    #[error("every calibration candidate was unstable; widen the ranges or soften the protocol")]
    AllUnstable,
}

/// One row of the structure parameter table, lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    pub particle_spacing: f64,
    /// Shared cluster grid pitch and membership radius.
    pub cluster_spacing_radius: f64,
    pub cluster_stiffness: f64,
    pub link_radius: f64,
    pub link_stiffness: f64,
}

impl StructureParams {
    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            cluster_spacing: self.cluster_spacing_radius,
            cluster_radius: self.cluster_spacing_radius,
            cluster_stiffness: self.cluster_stiffness,
            link_radius: self.link_radius,
            link_stiffness: self.link_stiffness,
        }
    }

    fn validate(&self, name: &str) -> Result<(), CalibrationError> {
        let row = |field, value, constraint| CalibrationError::InvalidRow {
            name: name.to_string(),
            field,
            value,
            constraint,
        };
        for (field, value) in [
            ("particle_spacing", self.particle_spacing),
            ("cluster_spacing_radius", self.cluster_spacing_radius),
            ("link_radius", self.link_radius),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(row(field, value, "must be positive and finite"));
            }
        }
        for (field, value) in [
            ("cluster_stiffness", self.cluster_stiffness),
            ("link_stiffness", self.link_stiffness),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(row(field, value, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Named structure rows, ordered by name.
#[derive(Debug, Clone, Default)]
pub struct StructureParamTable {
    rows: BTreeMap<String, StructureParams>,
}

impl StructureParamTable {
    pub fn from_reader<R: std::io::Read>(reader: R, origin: &str) -> Result<Self, CalibrationError> {
        #[derive(Deserialize)]
        struct Row {
            name: String,
            particle_spacing: f64,
            cluster_spacing_radius: f64,
            cluster_stiffness: f64,
            link_radius: f64,
            link_stiffness: f64,
        }
        let mut csv_reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rows = BTreeMap::new();
        for record in csv_reader.deserialize::<Row>() {
            let row = record.map_err(|source| CalibrationError::Csv {
                path: origin.to_string(),
                source,
            })?;
            let params = StructureParams {
                particle_spacing: row.particle_spacing,
                cluster_spacing_radius: row.cluster_spacing_radius,
                cluster_stiffness: row.cluster_stiffness,
                link_radius: row.link_radius,
                link_stiffness: row.link_stiffness,
            };
            params.validate(&row.name)?;
            if rows.insert(row.name.clone(), params).is_some() {
                return Err(CalibrationError::DuplicateStructure { name: row.name });
            }
        }
        if rows.is_empty() {
            return Err(CalibrationError::EmptyTable);
        }
        Ok(Self { rows })
    }

    pub fn get(&self, name: &str) -> Result<&StructureParams, CalibrationError> {
        self.rows
            .get(name)
            .ok_or_else(|| CalibrationError::UnknownStructure {
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StructureParams)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Loads a structure table CSV with columns `name, particle_spacing,
/// cluster_spacing_radius, cluster_stiffness, link_radius, link_stiffness`.
/// Lines starting with `#` are annotations and are skipped.
pub fn load_structure_params(path: &Path) -> Result<StructureParamTable, CalibrationError> {
    let file = std::fs::File::open(path).map_err(|source| CalibrationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    StructureParamTable::from_reader(file, &path.display().to_string())
}

/// Insertion protocol: how deep, how densely sampled, how many repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    /// Stop once the tip has travelled this far, in metres.
    pub depth_max: f64,
    /// Record one frame per this much depth, in metres.
    pub sample_interval: f64,
    /// Insertions to average over.
    pub insertions: usize,
    /// Half-width of the uniform entry-point jitter cube, in metres; zero
    /// disables jitter.
    pub noise_amplitude: f64,
    pub seed: u64,
    /// A particle moving faster than this multiple of the catheter speed
    /// marks the run unstable.
    pub speed_limit_factor: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            depth_max: 0.0314,
            sample_interval: 0.00034,
            insertions: 1,
            noise_amplitude: 0.0,
            seed: 0,
            speed_limit_factor: 10.0,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.depth_max > 0.0 && self.depth_max.is_finite()) {
            return Err(CalibrationError::InvalidProtocol("depth_max must be positive"));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(CalibrationError::InvalidProtocol(
                "sample_interval must be positive",
            ));
        }
        if self.insertions == 0 {
            return Err(CalibrationError::InvalidProtocol("insertions must be >= 1"));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(CalibrationError::InvalidProtocol(
                "noise_amplitude must be non-negative",
            ));
        }
        if !(self.speed_limit_factor > 0.0) {
            return Err(CalibrationError::InvalidProtocol(
                "speed_limit_factor must be positive",
            ));
        }
        Ok(())
    }
}

/// Wall-clock step timing summary in milliseconds.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StepTimings {
    pub steps: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl StepTimings {
    fn from_samples(mut samples: Vec<f64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let steps = samples.len();
        let mean_ms = samples.iter().sum::<f64>() / steps as f64;
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95_index = ((steps as f64 * 0.95).ceil() as usize).clamp(1, steps) - 1;
        Self {
            steps,
            mean_ms,
            p95_ms: samples[p95_index],
            max_ms: samples[steps - 1],
        }
    }
}

/// Everything an insertion experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Frames averaged over insertions.
    pub record: InsertionRecord,
    pub timings: StepTimings,
    /// Rest and final positions of the last insertion, for field exports.
    pub rest_positions: Vec<Vec3>,
    pub final_positions: Vec<Vec3>,
    /// Hole-perimeter probes at full depth of the last insertion.
    pub perimeter: PerimeterSamples,
    pub insertions: usize,
    /// Contacts resolved along an arbitrary perpendicular (particle exactly
    /// on the shaft axis), summed over all steps.
    pub on_axis_contacts: usize,
    /// Worst per-step count of rank-deficient clusters.
    pub degenerate_clusters: usize,
}

/// Runs `protocol.insertions` catheter insertions and averages the records.
///
/// `build_scene` is called once per insertion with the insertion index and
/// must return a fresh scene; entry-point jitter (if enabled) perturbs the
/// catheter rig, not the scene. The scene must carry a measurement slab.
pub fn run_insertion_experiment<F>(
    mut build_scene: F,
    rig: &CatheterRig,
    config: &SimConfig,
    protocol: &Protocol,
) -> Result<ExperimentOutcome, CalibrationError>
where
    F: FnMut(usize) -> Result<Scene, SceneError>,
{
    protocol.validate()?;
    config.validate()?;
    if !(rig.speed > 0.0) {
        return Err(CalibrationError::InvalidProtocol(
            "catheter speed must be positive",
        ));
    }

    let speed_limit = protocol.speed_limit_factor * rig.speed;
    let max_steps = (protocol.depth_max / (rig.speed * config.dt)).ceil() as usize + 4;

    let mut solver = Solver::new();
    let mut per_insertion: Vec<InsertionRecord> = Vec::with_capacity(protocol.insertions);
    let mut latencies: Vec<f64> = Vec::new();
    let mut on_axis_total = 0usize;
    let mut degenerate_max = 0usize;
    let mut last_state: Option<(Scene, CatheterRig)> = None;

    for k in 0..protocol.insertions {
        let mut scene = build_scene(k)?;
        let slab = scene.slab.ok_or(CalibrationError::InvalidProtocol(
            "scene is missing a measurement slab",
        ))?;
        let rig_k = jittered_rig(rig, protocol, k);
        let tip0 = rig_k.tip_at(0.0);

        let mut record = InsertionRecord::default();
        record.frames.push(RecordFrame {
            time: 0.0,
            depth: 0.0,
            slab_displacement: 0.0,
            com_displacement: 0.0,
            com_axial: 0.0,
            contacts: 0,
        });

        let mut time = 0.0;
        let mut next_depth = protocol.sample_interval;
        for _ in 0..max_steps {
            time += config.dt;
            scene.constraints.capsules.clear();
            scene.constraints.capsules.push(rig_k.pose_at(time));

            let started = Instant::now();
            let report = solver.step(&mut scene.system, &scene.constraints, config)?;
            latencies.push(started.elapsed().as_secs_f64() * 1e3);

            on_axis_total += report.on_axis_contacts;
            degenerate_max = degenerate_max.max(report.degenerate_clusters);
            if report.max_speed > speed_limit {
                return Err(CalibrationError::Unstable {
                    time,
                    max_speed: report.max_speed,
                    limit: speed_limit,
                    factor: protocol.speed_limit_factor,
                });
            }

            let depth = penetration_depth(&tip0, &rig_k.tip_at(time));
            let reached_end = depth >= protocol.depth_max - 1e-12;
            if depth + 1e-12 >= next_depth || reached_end {
                let com = com_displacement(&scene.system.rest_positions, &scene.system.positions);
                record.frames.push(RecordFrame {
                    time,
                    depth,
                    slab_displacement: slab_average_displacement(
                        &slab,
                        &scene.system.rest_positions,
                        &scene.system.positions,
                    )?,
                    com_displacement: com.norm(),
                    com_axial: com.dot(&rig_k.direction),
                    contacts: report.contacts as u64,
                });
                next_depth = protocol.sample_interval
                    * ((depth / protocol.sample_interval + 1e-9).floor() + 1.0);
            }
            if reached_end {
                break;
            }
        }
        per_insertion.push(record);
        last_state = Some((scene, rig_k));
    }

    let (final_scene, final_rig) = last_state.expect("insertions >= 1");
    let perimeter = sample_hole_perimeter(
        &final_scene.system.rest_positions,
        &final_scene.system.positions,
        &ProbeLine {
            origin: final_rig.entry,
            axis: final_rig.direction,
            radius: final_rig.radius + final_scene.constraints.contact_margin,
        },
        protocol.depth_max,
        final_scene.spacing_hint(),
    )?;

    Ok(ExperimentOutcome {
        record: average_records(&per_insertion),
        timings: StepTimings::from_samples(latencies),
        rest_positions: final_scene.system.rest_positions,
        final_positions: final_scene.system.positions,
        perimeter,
        insertions: protocol.insertions,
        on_axis_contacts: on_axis_total,
        degenerate_clusters: degenerate_max,
    })
}

fn jittered_rig(rig: &CatheterRig, protocol: &Protocol, insertion: usize) -> CatheterRig {
    if protocol.noise_amplitude == 0.0 {
        return *rig;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed.wrapping_add(insertion as u64));
    let a = protocol.noise_amplitude;
    let jitter = Vec3::new(
        rng.gen_range(-a..=a),
        rng.gen_range(-a..=a),
        rng.gen_range(-a..=a),
    );
    CatheterRig {
        entry: rig.entry + jitter,
        ..*rig
    }
}

fn average_records(records: &[InsertionRecord]) -> InsertionRecord {
    let first = &records[0];
    if records.len() == 1 {
        return first.clone();
    }
    let n = records.len() as f64;
    let mut frames = Vec::with_capacity(first.frames.len());
    for (i, base) in first.frames.iter().enumerate() {
        let mut slab = 0.0;
        let mut com = 0.0;
        let mut axial = 0.0;
        let mut contacts = 0.0;
        for r in records {
            debug_assert_eq!(r.frames.len(), first.frames.len());
            let f = &r.frames[i];
            slab += f.slab_displacement;
            com += f.com_displacement;
            axial += f.com_axial;
            contacts += f.contacts as f64;
        }
        frames.push(RecordFrame {
            time: base.time,
            depth: base.depth,
            slab_displacement: slab / n,
            com_displacement: com / n,
            com_axial: axial / n,
            contacts: (contacts / n).round() as u64,
        });
    }
    InsertionRecord { frames }
}

/// Closed parameter interval; `min == max` pins the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn point(value: f64) -> Self {
        Self {
            min: value,
            max: value,
        }
    }

    pub fn is_point(&self) -> bool {
        self.min == self.max
    }

    fn width(&self) -> f64 {
        self.max - self.min
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// Search space over the four cluster and link parameters. The cluster grid
/// pitch and membership radius move together as one axis, which keeps every
/// candidate inside the coverage condition by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpace {
    pub cluster_spacing_radius: ParamRange,
    pub cluster_stiffness: ParamRange,
    pub link_radius: ParamRange,
    pub link_stiffness: ParamRange,
}

const AXES: usize = 4;
const AXIS_NAMES: [&str; AXES] = [
    "cluster_spacing_radius",
    "cluster_stiffness",
    "link_radius",
    "link_stiffness",
];
const MAX_GRID_LEVELS: usize = 16;

impl ParamSpace {
    fn ranges(&self) -> [ParamRange; AXES] {
        [
            self.cluster_spacing_radius,
            self.cluster_stiffness,
            self.link_radius,
            self.link_stiffness,
        ]
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let invalid = |field, message| CalibrationError::InvalidRange { field, message };
        for (i, r) in self.ranges().iter().enumerate() {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(invalid(AXIS_NAMES[i], "bounds must be finite with min <= max"));
            }
        }
        if self.cluster_spacing_radius.min <= 0.0 {
            return Err(invalid("cluster_spacing_radius", "must be positive"));
        }
        if self.link_radius.min <= 0.0 {
            return Err(invalid("link_radius", "must be positive"));
        }
        for (field, r) in [
            ("cluster_stiffness", self.cluster_stiffness),
            ("link_stiffness", self.link_stiffness),
        ] {
            if r.min < 0.0 || r.max > 1.0 {
                return Err(invalid(field, "must lie within [0, 1]"));
            }
        }
        Ok(())
    }

    fn params_of(&self, x: &[f64; AXES]) -> ClusterParams {
        ClusterParams {
            cluster_spacing: x[0],
            cluster_radius: x[0],
            cluster_stiffness: x[1],
            link_radius: x[2],
            link_stiffness: x[3],
        }
    }
}

/// One scored candidate, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub evaluation: usize,
    pub cluster_spacing_radius: f64,
    pub cluster_stiffness: f64,
    pub link_radius: f64,
    pub link_stiffness: f64,
    pub score_percent: f64,
}

/// Calibration result: the best candidate and the full evaluation log.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub best_params: ClusterParams,
    pub best_score: f64,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

/// Fits cluster and link parameters so the simulated displacement curve
/// matches `reference`, spending at most `budget` experiment evaluations.
///
/// Phase one scores a coarse grid over the free axes (about half the
/// budget); phase two runs coordinate descent from the best grid point with
/// steps that halve whenever a sweep makes no progress. Unstable candidates
/// score infinity; repeated candidates are served from a cache without
/// consuming budget. With a fixed thread pool the result is deterministic.
pub fn calibrate<F>(
    scene_for: F,
    rig: &CatheterRig,
    config: &SimConfig,
    protocol: &Protocol,
    space: &ParamSpace,
    reference: &[(f64, f64)],
    budget: usize,
) -> Result<CalibrationOutcome, CalibrationError>
where
    F: Fn(&ClusterParams, usize) -> Result<Scene, SceneError> + Sync,
{
    if budget == 0 {
        return Err(CalibrationError::InvalidBudget);
    }
    space.validate()?;
    if reference.is_empty() {
        return Err(CalibrationError::Metrics(MetricsError::EmptyCurve {
            which: "reference",
        }));
    }

    let ranges = space.ranges();
    let free: Vec<usize> = (0..AXES).filter(|&i| !ranges[i].is_point()).collect();

    let evaluate = |x: &[f64; AXES]| -> Result<f64, CalibrationError> {
        let params = space.params_of(x);
        let outcome =
            run_insertion_experiment(|k| scene_for(&params, k), rig, config, protocol);
        match outcome {
            Ok(o) => Ok(mismatch_score(&o.record.to_curve(), reference)?.score_percent),
            Err(CalibrationError::Unstable { .. }) => Ok(f64::INFINITY),
            Err(CalibrationError::Solver(PbdError::NonFinite { .. })) => Ok(f64::INFINITY),
            Err(other) => Err(other),
        }
    };

    // Coarse grid over the free axes, capped at about half the budget.
    let levels = grid_levels(budget / 2, free.len());
    let grid = grid_candidates(&ranges, &free, levels);
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|x| evaluate(x))
        .collect::<Result<Vec<_>, _>>()?;

    let mut cache: BTreeMap<[u64; AXES], f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut best_x = grid[0];
    let mut best_score = f64::INFINITY;
    for (x, &score) in grid.iter().zip(&scores) {
        cache.insert(key_of(x), score);
        trace.push(trace_row(trace.len(), x, score));
        if score < best_score {
            best_score = score;
            best_x = *x;
        }
    }

    // Coordinate descent with shrinking steps on the remaining budget.
    let mut steps = [0.0f64; AXES];
    for &j in &free {
        steps[j] = ranges[j].width() / (2.0 * levels as f64);
    }
    let mut remaining = budget - grid.len();
    'descent: while remaining > 0 && !free.is_empty() {
        let mut improved = false;
        for &j in &free {
            for direction in [1.0, -1.0] {
                let mut candidate = best_x;
                candidate[j] = ranges[j].clamp(best_x[j] + direction * steps[j]);
                if candidate[j] == best_x[j] {
                    continue;
                }
                let key = key_of(&candidate);
                let score = match cache.get(&key) {
                    Some(&s) => s,
                    None => {
                        if remaining == 0 {
                            break 'descent;
                        }
                        let s = evaluate(&candidate)?;
                        remaining -= 1;
                        cache.insert(key, s);
                        trace.push(trace_row(trace.len(), &candidate, s));
                        s
                    }
                };
                if score < best_score {
                    best_score = score;
                    best_x = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            let mut any_left = false;
            for &j in &free {
                steps[j] *= 0.5;
                if steps[j] >= ranges[j].width() * 1e-3 {
                    any_left = true;
                }
            }
            if !any_left {
                break;
            }
        }
    }

    if !best_score.is_finite() {
        return Err(CalibrationError::AllUnstable);
    }
    Ok(CalibrationOutcome {
        best_params: space.params_of(&best_x),
        best_score,
        evaluations: trace.len(),
        trace,
    })
}

fn trace_row(evaluation: usize, x: &[f64; AXES], score: f64) -> TraceRow {
    TraceRow {
        evaluation,
        cluster_spacing_radius: x[0],
        cluster_stiffness: x[1],
        link_radius: x[2],
        link_stiffness: x[3],
        score_percent: score,
    }
}

fn key_of(x: &[f64; AXES]) -> [u64; AXES] {
    std::array::from_fn(|i| x[i].to_bits())
}

/// Largest level count whose full grid fits in `cap` evaluations.
fn grid_levels(cap: usize, free_axes: usize) -> usize {
    if free_axes == 0 || cap <= 1 {
        return 1;
    }
    let mut levels = (cap as f64).powf(1.0 / free_axes as f64).floor() as usize;
    levels = levels.clamp(1, MAX_GRID_LEVELS);
    while levels > 1 && levels.pow(free_axes as u32) > cap {
        levels -= 1;
    }
    levels
}

/// Cartesian grid in lexicographic axis order; pinned axes contribute their
/// single value, free axes use cell-center levels.
fn grid_candidates(
    ranges: &[ParamRange; AXES],
    free: &[usize],
    levels: usize,
) -> Vec<[f64; AXES]> {
    let mut base = [0.0f64; AXES];
    for i in 0..AXES {
        base[i] = if ranges[i].is_point() {
            ranges[i].min
        } else {
            ranges[i].midpoint()
        };
    }
    let mut out = vec![base];
    for &axis in free {
        let values: Vec<f64> = (0..levels)
            .map(|i| ranges[axis].min + (i as f64 + 0.5) * ranges[axis].width() / levels as f64)
            .collect();
        let mut next = Vec::with_capacity(out.len() * levels);
        for candidate in &out {
            for &v in &values {
                let mut c = *candidate;
                c[axis] = v;
                next.push(c);
            }
        }
        out = next;
    }
    out
}
