//! Projection, alignment protocols and the upright depth frame on a sampled
//! pose.
//!
//! Usage: cargo run --example geometry_alignment [seed]

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relpose::eval::{example_mpjpe, Protocol};
use relpose::geometry::{
    optimal_scale_align, procrustes_align, project_orthographic, project_perspective, rotation_x, rotation_z,
    upright_depths, CameraExtrinsics, Intrinsics, OrthoScale,
};
use relpose::synth::PoseSampler;

fn main() -> relpose::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = PoseSampler::human17(0.6)?;
    let names = sampler.skeleton().joint_names().to_vec();
    let truth = sampler.sample_pose(&mut rng).root_centered();

    // a prediction that is rotated, shrunk and shifted copy of the truth
    let r = rotation_z(0.4) * rotation_x(-0.2);
    let pred = truth.map_coords(|p| (0.6 * r * Vector3::from(p) + Vector3::new(40.0, -25.0, 300.0)).into());
    for protocol in Protocol::ALL {
        println!("{protocol:>10}: {:8.3} mm", example_mpjpe(&pred, &truth, protocol)?);
    }
    let sim = procrustes_align(&pred, &truth)?;
    println!("procrustes recovered scale {:.4} (expected {:.4})", sim.scale, 1.0 / 0.6);
    let scaled = optimal_scale_align(&pred.root_centered(), &truth)?;
    println!("least-squares scale {:.4}", scaled.scale);

    let ortho = project_orthographic(&truth, OrthoScale::new(0.25)?)?;
    let persp = project_perspective(&truth, 4000.0, &Intrinsics::new(1000.0, 1000.0)?)?;
    println!("\n{:<12} {:>16} {:>16}", "joint", "orthographic", "perspective");
    for (name, (o, p)) in names.iter().zip(ortho.coords().iter().zip(persp.coords())).take(6) {
        println!("{name:<12} {:>7.1} {:>7.1}  {:>7.1} {:>7.1}", o[0], o[1], p[0], p[1]);
    }

    // a camera three metres away looking slightly down at the pose
    let world = truth.map_coords(|p| [p[0], p[2], -p[1] + 1000.0]);
    let cam = CameraExtrinsics::look_at(Vector3::new(0.0, -3000.0, 1800.0), Vector3::new(0.0, 0.0, 1000.0))?;
    let tilted = cam.transform(&world).depths();
    let upright = upright_depths(&world, &cam)?;
    println!("\n{:<12} {:>10} {:>10}", "joint", "camera z", "upright z");
    for (name, (a, b)) in names.iter().zip(tilted.iter().zip(&upright)) {
        println!("{name:<12} {a:>10.1} {b:>10.1}");
    }
    Ok(())
}
