//! The three subcommands and their artifact writers.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sim_core::{calibrate, run_insertion_experiment, ExperimentOutcome, Vec3};

use crate::error::CliError;
use crate::scenario::LoadedScenario;

pub fn cmd_run(scn: &LoadedScenario, out: &Path) -> Result<(), CliError> {
    let outcome = run_experiment(scn)?;
    ensure_dir(out)?;

    let path = write_record(&outcome, out)?;
    write_field(&outcome, out)?;
    write_perimeter(&outcome, out)?;
    write_summary(scn, &outcome, out)?;

    let last = outcome.record.frames.last();
    println!(
        "{}: {} insertion(s), {} frames to {}",
        scn.name,
        outcome.insertions,
        outcome.record.frames.len(),
        path.display()
    );
    if let Some(f) = last {
        println!(
            "final depth {:.2} mm, slab displacement {:.4} mm, com displacement {:.4} mm",
            f.depth * 1e3,
            f.slab_displacement * 1e3,
            f.com_displacement * 1e3
        );
    }
    println!(
        "steps {}, mean {:.3} ms, p95 {:.3} ms, max {:.3} ms",
        outcome.timings.steps,
        outcome.timings.mean_ms,
        outcome.timings.p95_ms,
        outcome.timings.max_ms
    );
    Ok(())
}

pub fn cmd_calibrate(
    scn: &LoadedScenario,
    out: &Path,
    budget_override: Option<usize>,
) -> Result<(), CliError> {
    let setup = scn.calibration.as_ref().ok_or_else(|| CliError::Scenario {
        path: PathBuf::from(&scn.name),
        message: "scenario has no [calibration] section".into(),
    })?;
    if scn.bodies.len() != 1 {
        return Err(CliError::Scenario {
            path: PathBuf::from(&scn.name),
            message: "calibration expects exactly one body".into(),
        });
    }
    let reference = read_curve(&setup.reference_path)?;
    let budget = budget_override.unwrap_or(setup.budget);

    let outcome = calibrate(
        |params, _| scn.scene_with(params),
        &scn.rig,
        &scn.config,
        &scn.protocol,
        &setup.space,
        &reference,
        budget,
    )?;

    ensure_dir(out)?;
    let trace_path = out.join("trace.csv");
    let mut w = csv::Writer::from_writer(create(&trace_path)?);
    for row in &outcome.trace {
        w.serialize(row).map_err(|source| CliError::Table {
            path: trace_path.clone(),
            source,
        })?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: trace_path.clone(),
        source,
    })?;

    let body = &scn.bodies[0];
    let best = &outcome.best_params;
    let params_path = out.join("best_params.csv");
    let mut w = csv::Writer::from_writer(create(&params_path)?);
    #[derive(Serialize)]
    struct ParamRow<'a> {
        name: &'a str,
        particle_spacing: f64,
        cluster_spacing_radius: f64,
        cluster_stiffness: f64,
        link_radius: f64,
        link_stiffness: f64,
    }
    w.serialize(ParamRow {
        name: &body.name,
        particle_spacing: body.sample.spacing,
        cluster_spacing_radius: best.cluster_spacing,
        cluster_stiffness: best.cluster_stiffness,
        link_radius: best.link_radius,
        link_stiffness: best.link_stiffness,
    })
    .and_then(|_| w.flush().map_err(csv::Error::from))
    .map_err(|source| CliError::Table {
        path: params_path,
        source,
    })?;

    write_json(
        &out.join("calibration.json"),
        &json!({
            "scenario": scn.name,
            "body": body.name,
            "budget": budget,
            "evaluations": outcome.evaluations,
            "best_score_percent": outcome.best_score,
            "best_params": {
                "cluster_spacing_radius": best.cluster_spacing,
                "cluster_stiffness": best.cluster_stiffness,
                "link_radius": best.link_radius,
                "link_stiffness": best.link_stiffness,
            },
        }),
    )?;

    println!(
        "{}: best score {:.4}% after {} evaluations",
        scn.name, outcome.best_score, outcome.evaluations
    );
    println!(
        "cluster_spacing_radius {}, cluster_stiffness {}, link_radius {}, link_stiffness {}",
        best.cluster_spacing, best.cluster_stiffness, best.link_radius, best.link_stiffness
    );
    Ok(())
}

pub fn cmd_validate(scn: &LoadedScenario, probes: &Path, out: &Path) -> Result<(), CliError> {
    let rows = read_probes(probes)?;
    let outcome = run_experiment(scn)?;
    ensure_dir(out)?;

    #[derive(Serialize)]
    struct ValidationRow {
        x: f64,
        y: f64,
        z: f64,
        particle: usize,
        gap: f64,
        sim_dx: f64,
        sim_dy: f64,
        sim_dz: f64,
        ref_dx: f64,
        ref_dy: f64,
        ref_dz: f64,
        error_percent: f64,
    }

    let mut records = Vec::with_capacity(rows.len());
    for probe in &rows {
        let target = Vec3::new(probe.x, probe.y, probe.z);
        let (particle, gap) = nearest_particle(&outcome.rest_positions, &target);
        let sim = outcome.final_positions[particle] - outcome.rest_positions[particle];
        let reference = Vec3::new(probe.dx, probe.dy, probe.dz);
        let error_percent = 100.0 * (reference - sim).norm() / sim.norm().max(1e-12);
        records.push(ValidationRow {
            x: probe.x,
            y: probe.y,
            z: probe.z,
            particle,
            gap,
            sim_dx: sim.x,
            sim_dy: sim.y,
            sim_dz: sim.z,
            ref_dx: probe.dx,
            ref_dy: probe.dy,
            ref_dz: probe.dz,
            error_percent,
        });
    }

    let csv_path = out.join("validation.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    for record in &records {
        w.serialize(record).map_err(|source| CliError::Table {
            path: csv_path.clone(),
            source,
        })?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: csv_path.clone(),
        source,
    })?;

    let mean = records.iter().map(|r| r.error_percent).sum::<f64>() / records.len() as f64;
    let max = records
        .iter()
        .map(|r| r.error_percent)
        .fold(f64::NEG_INFINITY, f64::max);
    write_json(
        &out.join("validation.json"),
        &json!({
            "scenario": scn.name,
            "probes": records.len(),
            "mean_error_percent": mean,
            "max_error_percent": max,
        }),
    )?;

    println!(
        "{}: {} probes, mean error {:.3}%, max {:.3}%",
        scn.name,
        records.len(),
        mean,
        max
    );
    Ok(())
}

fn run_experiment(scn: &LoadedScenario) -> Result<ExperimentOutcome, CliError> {
    Ok(run_insertion_experiment(
        |_| scn.scene(),
        &scn.rig,
        &scn.config,
        &scn.protocol,
    )?)
}

fn write_record(outcome: &ExperimentOutcome, out: &Path) -> Result<PathBuf, CliError> {
    let path = out.join("record.csv");
    outcome.record.write_csv(create(&path)?)?;
    Ok(path)
}

fn write_field(outcome: &ExperimentOutcome, out: &Path) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct FieldRow {
        x: f64,
        y: f64,
        z: f64,
        dx: f64,
        dy: f64,
        dz: f64,
    }
    let path = out.join("field.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    for (rest, now) in outcome
        .rest_positions
        .iter()
        .zip(&outcome.final_positions)
    {
        let d = now - rest;
        w.serialize(FieldRow {
            x: rest.x,
            y: rest.y,
            z: rest.z,
            dx: d.x,
            dy: d.y,
            dz: d.z,
        })
        .map_err(|source| CliError::Table {
            path: path.clone(),
            source,
        })?;
    }
    w.flush().map_err(|source| CliError::Write { path, source })
}

fn write_perimeter(outcome: &ExperimentOutcome, out: &Path) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct PerimeterRow {
        x: f64,
        y: f64,
        z: f64,
        particle: usize,
        gap: f64,
        displacement: f64,
    }
    let path = out.join("perimeter.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    for point in &outcome.perimeter.points {
        w.serialize(PerimeterRow {
            x: point.target.x,
            y: point.target.y,
            z: point.target.z,
            particle: point.particle,
            gap: point.gap,
            displacement: point.displacement,
        })
        .map_err(|source| CliError::Table {
            path: path.clone(),
            source,
        })?;
    }
    w.flush().map_err(|source| CliError::Write { path, source })
}

fn write_summary(
    scn: &LoadedScenario,
    outcome: &ExperimentOutcome,
    out: &Path,
) -> Result<(), CliError> {
    let scene = scn.scene()?;
    let bodies: Vec<_> = scene
        .bodies
        .iter()
        .map(|b| {
            let pinned = scene.system.inv_mass[b.particles.clone()]
                .iter()
                .filter(|&&w| w == 0.0)
                .count();
            json!({
                "name": b.name,
                "particles": b.particles.len(),
                "clusters": b.clusters.len(),
                "links": b.links.len(),
                "pinned": pinned,
                "particle_spacing": b.particle_spacing,
                "cluster_spacing_radius": b.params.cluster_spacing,
                "cluster_stiffness": b.params.cluster_stiffness,
                "link_radius": b.params.link_radius,
                "link_stiffness": b.params.link_stiffness,
            })
        })
        .collect();
    let final_frame = outcome.record.frames.last().map(|f| {
        json!({
            "time": f.time,
            "depth": f.depth,
            "slab_displacement": f.slab_displacement,
            "com_displacement": f.com_displacement,
            "com_axial": f.com_axial,
            "contacts": f.contacts,
        })
    });
    write_json(
        &out.join("summary.json"),
        &json!({
            "scenario": scn.name,
            "bodies": bodies,
            "insertions": outcome.insertions,
            "frames": outcome.record.frames.len(),
            "final": final_frame,
            "perimeter_mean_displacement": outcome.perimeter.mean_displacement,
            "on_axis_contacts": outcome.on_axis_contacts,
            "degenerate_clusters": outcome.degenerate_clusters,
            "timings": serde_json::to_value(outcome.timings).expect("timings serialize"),
            "protocol": {
                "depth_max": scn.protocol.depth_max,
                "sample_interval": scn.protocol.sample_interval,
                "insertions": scn.protocol.insertions,
                "noise_amplitude": scn.protocol.noise_amplitude,
                "seed": scn.protocol.seed,
                "speed_limit_factor": scn.protocol.speed_limit_factor,
            },
            "solver": {
                "dt": scn.config.dt,
                "iterations": scn.config.solver_iterations,
                "substeps": scn.config.substeps,
                "gravity": [scn.config.gravity.x, scn.config.gravity.y, scn.config.gravity.z],
                "damping": scn.config.damping,
            },
            "catheter": {
                "entry": [scn.rig.entry.x, scn.rig.entry.y, scn.rig.entry.z],
                "direction": [scn.rig.direction.x, scn.rig.direction.y, scn.rig.direction.z],
                "speed": scn.rig.speed,
                "radius": scn.rig.radius,
                "shaft_length": scn.rig.shaft_length,
                "contact_margin": scn.contact_margin,
                "friction": scn.friction,
            },
        }),
    )
}

#[derive(Deserialize)]
struct CurveRow {
    depth: f64,
    displacement: f64,
}

fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut curve = Vec::new();
    for row in reader.deserialize::<CurveRow>() {
        let row = row.map_err(|source| CliError::Table {
            path: path.to_path_buf(),
            source,
        })?;
        curve.push((row.depth, row.displacement));
    }
    if curve.is_empty() {
        return Err(CliError::TableShape {
            path: path.to_path_buf(),
            message: "reference curve has no rows".into(),
        });
    }
    Ok(curve)
}

#[derive(Deserialize)]
struct ProbeRow {
    x: f64,
    y: f64,
    z: f64,
    dx: f64,
    dy: f64,
    dz: f64,
}

fn read_probes(path: &Path) -> Result<Vec<ProbeRow>, CliError> {
    let file = File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for row in reader.deserialize::<ProbeRow>() {
        rows.push(row.map_err(|source| CliError::Table {
            path: path.to_path_buf(),
            source,
        })?);
    }
    if rows.is_empty() {
        return Err(CliError::TableShape {
            path: path.to_path_buf(),
            message: "probe table has no rows".into(),
        });
    }
    Ok(rows)
}

fn nearest_particle(rest: &[Vec3], target: &Vec3) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, p) in rest.iter().enumerate() {
        let d = (p - target).norm();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut file = create(path)?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source: source.into(),
    })?;
    file.write_all(b"\n").map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}
