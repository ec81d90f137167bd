//! Compares the analytic gradient of the relative-mode training loss with
//! central finite differences on a small synthetic minibatch.
//!
//! Usage: cargo run --example gradient_check [batch] [perspective]

use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relpose::gradcheck::{central_differences, max_relative_error};
use relpose::losses::{loss_total, LossBatch, LossWeights, ProjectionMode, SupervisionMode};
use relpose::pose::{JointSet2D, RelativeAnnotationSet, Skeleton};
use relpose::synth::{generate_dataset, SynthConfig};

fn main() -> relpose::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let batch = args.first().and_then(|s| s.parse().ok()).unwrap_or(4);
    let projection = if args.get(1).is_some_and(|s| s == "perspective") { ProjectionMode::Perspective } else { ProjectionMode::Orthographic };

    let data = generate_dataset(&SynthConfig { num_examples: batch, num_pairs: 6, eps: 30.0, seed: 5, ..SynthConfig::default() })?;
    let skeleton = Skeleton::human17();
    let keypoints: Vec<JointSet2D> = data.iter().map(|e| e.joints2d.clone()).collect();
    let annotations: Vec<RelativeAnnotationSet> = data.iter().map(|e| e.annotations.clone()).collect();
    let intrinsics: Vec<_> = data.iter().map(|e| e.camera.as_ref().unwrap().intrinsics).collect();

    // a jittered copy of the ground truth in metres; the exact truth sits on
    // the kink of the skeleton term
    let j = skeleton.num_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x: Vec<f64> = Vec::with_capacity(batch * (j * 3 + 1));
    for e in &data {
        let p = e.joints3d.as_ref().unwrap().root_centered();
        x.extend(p.coords().iter().flat_map(|c| c.map(|v| v / 1000.0 + rng.random_range(-0.05..0.05))));
    }
    x.extend((0..batch).map(|_| rng.random_range(200.0..400.0)));

    let weights = LossWeights::default();
    let eval = |x: &[f64]| {
        let poses = Array3::from_shape_vec((batch, j, 3), x[..batch * j * 3].to_vec()).unwrap();
        let scales = Array1::from_vec(x[batch * j * 3..].to_vec());
        let b = LossBatch { keypoints: &keypoints, annotations: Some(&annotations), targets: None, intrinsics: Some(&intrinsics), skeleton: &skeleton };
        loss_total(&poses.view(), &scales.view(), &b, &weights, projection, SupervisionMode::Relative).unwrap()
    };

    let value = eval(&x);
    let analytic: Vec<f64> = value.grad_poses.iter().chain(value.grad_scales.iter()).copied().collect();
    let numeric = central_differences(|p| eval(p).total, &x, 1e-6);
    println!("{projection:?} loss {:.6} ({:?})", value.total, value.terms);
    println!("{} coordinates, max relative error {:.2e}", x.len(), max_relative_error(&analytic, &numeric, 1e-5));
    Ok(())
}
