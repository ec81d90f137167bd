//! Trains on clean and on partly flipped relative labels, then evaluates both
//! models under increasing 2D keypoint noise.
//!
//! Usage: cargo run --release --example noise_robustness [num_train] [epochs] [flip_rate]

use relpose::cli::predict_with_noise;
use relpose::eval::{mpjpe, Protocol};
use relpose::net::NetConfig;
use relpose::pose::JointSet3D;
use relpose::synth::{generate_dataset, AnnotatorModel, SynthConfig};
use relpose::trainer::{train, LiftingModel, TrainConfig};

fn procrustes(model: &LiftingModel, heldout: &[relpose::pose::PoseExample], truth: &[JointSet3D], sigma: f64) -> relpose::Result<f64> {
    mpjpe(&predict_with_noise(model, heldout, sigma, 6)?, truth, Protocol::Procrustes)
}

fn main() -> relpose::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let num_train = args.first().copied().unwrap_or(2000.0) as usize;
    let epochs = args.get(1).copied().unwrap_or(15.0) as usize;
    let rate = args.get(2).copied().unwrap_or(0.25);

    let base = SynthConfig { num_examples: num_train, seed: 1, ..SynthConfig::default() };
    let clean = generate_dataset(&base)?;
    let noisy = generate_dataset(&SynthConfig { label_noise: Some(AnnotatorModel::UniformFlip { rate }), ..base })?;
    let heldout = generate_dataset(&SynthConfig { num_examples: 300, seed: 2, ..SynthConfig::default() })?;
    let truth: Vec<JointSet3D> = heldout.iter().map(|e| e.joints3d.clone().unwrap()).collect();

    let net = NetConfig { hidden_width: 256, dropout_rate: 0.1, ..NetConfig::default() };
    let cfg = TrainConfig { epochs, eval_every: 0, ..TrainConfig::default() };
    let (clean_model, _) = train(&net, &cfg, &clean, &[])?;
    let (noisy_model, _) = train(&net, &cfg, &noisy, &[])?;

    println!("{:>10} {:>12} {:>16}", "2D noise", "clean labels", format!("{:.0}% flipped", rate * 100.0));
    for sigma in [0.0, 5.0, 10.0, 15.0, 20.0] {
        println!(
            "{:>8.0}px {:>12.1} {:>16.1}",
            sigma,
            procrustes(&clean_model, &heldout, &truth, sigma)?,
            procrustes(&noisy_model, &heldout, &truth, sigma)?
        );
    }
    Ok(())
}
