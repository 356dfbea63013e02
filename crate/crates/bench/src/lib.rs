//! Scene builders shared by the benchmarks.

use sim_core::{
    make_box_mesh, sample_volume, CapsulePose, ClusterParams, Face, Scene, SceneBuilder, Slab,
    Vec3,
};

/// Cluster and link parameters in the range the structure tables use.
pub fn tissue_params() -> ClusterParams {
    ClusterParams {
        cluster_spacing: 0.005,
        cluster_radius: 0.005,
        cluster_stiffness: 0.002,
        link_radius: 0.0026,
        link_stiffness: 0.001,
    }
}

/// A box body pinned at its far face with a capsule lodged halfway through,
/// so every step pays for shape matching, links and live contacts.
pub fn box_scene(extent: Vec3, spacing: f64, params: ClusterParams) -> Scene {
    let mesh = make_box_mesh(Vec3::zeros(), extent);
    let sample = sample_volume(&mesh, spacing).expect("box sampling");
    let mut scene = SceneBuilder::new()
        .contact_margin(0.6 * spacing)
        .measurement_slab(Slab {
            axis: Vec3::x(),
            center: 0.5 * extent.x,
            half_width: 0.5 * spacing,
        })
        .add_body("block", sample, params, &[Face::XMax])
        .build()
        .expect("scene build");
    scene.constraints.capsules.push(CapsulePose {
        tail: Vec3::new(-0.05, 0.5 * extent.y, 0.5 * extent.z),
        tip: Vec3::new(0.5 * extent.x, 0.5 * extent.y, 0.5 * extent.z),
        radius: 0.00125,
    });
    scene
}
