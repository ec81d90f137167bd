use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relpose::crowd::{label_posteriors, majority_merge, Choice, RawVote};
use relpose::geometry::{
    optimal_scale_align, procrustes_align, project_orthographic, project_perspective, rotation_x, rotation_y,
    rotation_z, upright_depths, CameraExtrinsics, Intrinsics, OrthoScale,
};
use relpose::losses::SupervisionMode;
use relpose::net::{backward, forward, init_params, Mode, NetConfig};
use relpose::pose::{JointSet3D, Relation};
use relpose::synth::{generate_dataset, PoseSampler, SynthConfig};
use relpose::trainer::{clip_gradients, train, TrainConfig};

fn pose(seed: u64) -> JointSet3D {
    PoseSampler::human17(0.6).unwrap().sample_pose(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn rotation(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    rotation_z(a) * rotation_y(b) * rotation_x(c)
}

fn sse(a: &JointSet3D, b: &JointSet3D) -> f64 {
    a.coords().iter().zip(b.coords()).map(|(p, q)| (Vector3::from(*p) - Vector3::from(*q)).norm_squared()).sum()
}

/// Camera at `center` with heading `yaw`, then pitched and rolled.
fn camera(center: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> CameraExtrinsics {
    let forward = Vector3::new(yaw.sin(), yaw.cos(), 0.0);
    let level = CameraExtrinsics::look_at(Vector3::zeros(), forward).unwrap();
    let r = rotation_z(roll) * rotation_x(pitch) * level.rotation();
    CameraExtrinsics::new(r, -(r * center)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn procrustes_error_ignores_similarity_of_the_prediction(
        seed in 0u64..10_000, a in -3.1f64..3.1, b in -1.5f64..1.5, c in -3.1f64..3.1,
        s in 0.05f64..20.0, t in prop::array::uniform3(-5000.0f64..5000.0),
    ) {
        let truth = pose(seed);
        let pred = pose(seed + 1);
        let r = rotation(a, b, c);
        let moved = pred.map_coords(|p| (s * r * Vector3::from(p) + Vector3::from(t)).into());
        let e0 = procrustes_align(&pred, &truth).unwrap().error;
        let e1 = procrustes_align(&moved, &truth).unwrap().error;
        prop_assert!((e0 - e1).abs() < 1e-9 * (1.0 + e0), "{e0} vs {e1}");
    }

    /// The least-squares objectives are nested: similarity ⊇ scale ⊇ identity.
    #[test]
    fn alignment_objectives_are_nested(seed in 0u64..10_000, jitter in 0.0f64..300.0, s in 0.01f64..3.0) {
        let truth = pose(seed).root_centered();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<[f64; 3]> = (0..17).map(|_| [0; 3].map(|_| rng.random_range(-jitter..=jitter))).collect();
        let coords = pose(seed + 7).coords().iter().zip(&noise).map(|(p, n)| [0, 1, 2].map(|i| s * p[i] + n[i])).collect();
        let pred = JointSet3D::new(coords, 0).unwrap().root_centered();
        let procrustes = sse(&procrustes_align(&pred, &truth).unwrap().aligned, &truth);
        let scaled = sse(&optimal_scale_align(&pred, &truth).unwrap().scaled, &truth);
        let none = sse(&pred, &truth);
        prop_assert!(procrustes <= scaled * (1.0 + 1e-9) + 1e-9);
        prop_assert!(scaled <= none * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn upright_depths_ignore_heading_and_tilt(
        seed in 0u64..10_000, yaw in -3.1f64..3.1, turn in -3.1f64..3.1,
        pitch in -1.2f64..1.2, roll in -1.0f64..1.0, center in prop::array::uniform3(-4000.0f64..4000.0),
    ) {
        let world = pose(seed);
        let center = Vector3::from(center);
        let level = camera(center, yaw, 0.0, 0.0);
        let base = upright_depths(&world, &level).unwrap();
        let cam_z = level.transform(&world).depths();
        for (a, b) in base.iter().zip(&cam_z) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let tilted = upright_depths(&world, &camera(center, yaw, pitch, roll)).unwrap();
        let rz = rotation_z(turn);
        let turned_world = world.map_coords(|p| (rz * Vector3::from(p)).into());
        let turned = upright_depths(&turned_world, &camera(rz * center, yaw - turn, pitch, roll)).unwrap();
        for ((a, b), c) in base.iter().zip(&tilted).zip(&turned) {
            prop_assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn perspective_approaches_orthographic_far_away(seed in 0u64..10_000, s0 in 0.05f64..2.0) {
        let p = pose(seed).root_centered();
        let zmax = p.coords().iter().map(|c| c[2].abs()).fold(0.0, f64::max);
        let ortho = project_orthographic(&p, OrthoScale::new(s0).unwrap()).unwrap();
        let mut last = f64::INFINITY;
        for s in [1e5, 1e6, 1e7] {
            let persp = project_perspective(&p, s, &Intrinsics::new(s * s0, s * s0).unwrap()).unwrap();
            let err = ortho.coords().iter().zip(persp.coords()).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).fold(0.0, f64::max);
            let scale = ortho.coords().iter().map(|a| a[0].hypot(a[1])).fold(0.0, f64::max);
            prop_assert!(err <= 2.0 * scale * zmax / s + 1e-9);
            prop_assert!(err <= last);
            last = err;
        }
    }

    #[test]
    fn clipped_gradients_respect_the_bound(seed in 0u64..1000, factor in 1e-4f64..1e4, clip in 0.01f64..10.0) {
        let params = init_params(&NetConfig { hidden_width: 6, input_joints: 3, seed, ..NetConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let out = forward(&params, &x.view(), Mode::Train(&mut rng)).unwrap();
        let d = Array3::from_shape_fn((4, 3, 3), |_| rng.random_range(-1.0..1.0));
        let mut grads = backward(&params, &out.cache, &d.view(), &[0.3, -0.2, 0.1, 0.5]).unwrap();
        grads.scale(factor);
        let before = grads.clone();
        let norm = clip_gradients(&mut grads, clip).unwrap();
        prop_assert!(grads.global_norm() <= clip + 1e-9);
        if norm <= clip {
            prop_assert_eq!(grads, before);
        }
    }

    #[test]
    fn relation_is_antisymmetric(zj in -5000.0f64..5000.0, zk in -5000.0f64..5000.0, eps in 0.0f64..200.0) {
        prop_assert_eq!(Relation::from_depths(zj, zk, eps), Relation::from_depths(zk, zj, eps).flipped());
    }

    #[test]
    fn posteriors_flip_with_the_votes(
        items in prop::collection::vec(prop::collection::vec((0usize..4, any::<bool>()), 1..6), 1..20),
        skills in prop::array::uniform4(0.51f64..0.99),
    ) {
        let q = label_posteriors(&items, &skills);
        let flipped: Vec<Vec<(usize, bool)>> = items.iter().map(|v| v.iter().map(|&(u, a)| (u, !a)).collect()).collect();
        for (a, b) in q.iter().zip(label_posteriors(&flipped, &skills)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn majority_ignores_vote_order(choices in prop::collection::vec(any::<bool>(), 1..9), rot in 0usize..9) {
        let votes: Vec<RawVote> = choices.iter().enumerate().map(|(n, &j)| RawVote {
            image_id: "x".into(), j: 2, k: 5, annotator_id: format!("u{n}"),
            choice: if j { Choice::JCloser } else { Choice::KCloser }, timestamp: n as u64, elapsed_ms: 900,
        }).collect();
        let mut rotated = votes.clone();
        rotated.rotate_left(rot % votes.len());
        prop_assert_eq!(majority_merge(&votes).unwrap(), majority_merge(&rotated).unwrap());
    }
}

/// Statistical smoke test: the supervised loss falls over the first five
/// epochs for at least 19 of 20 seeds.
#[test]
fn supervised_loss_falls_for_almost_every_seed() {
    let train_set = generate_dataset(&SynthConfig { num_examples: 200, seed: 40, ..SynthConfig::default() }).unwrap();
    let mut falling = 0;
    for seed in 0..20 {
        let net = NetConfig { hidden_width: 32, dropout_rate: 0.1, seed, ..NetConfig::default() };
        let cfg = TrainConfig { epochs: 5, seed, supervision_mode: SupervisionMode::Full3d, eval_every: 0, ..TrainConfig::default() };
        let (_, log) = train(&net, &cfg, &train_set, &[]).unwrap();
        falling += (log.epochs[4].total < log.epochs[0].total) as usize;
    }
    assert!(falling >= 19, "loss fell for {falling} of 20 seeds");
}
