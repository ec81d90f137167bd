//! Trains the lifting network from one relative-depth pair per pose and
//! compares it with an untrained network and a fully supervised run.
//!
//! Usage: cargo run --release --example train_relative [num_train] [epochs] [hidden] [perturbation]

use relpose::eval::Protocol;
use relpose::losses::SupervisionMode;
use relpose::net::{init_params, NetConfig};
use relpose::synth::{generate_dataset, SynthConfig};
use relpose::trainer::{fit_input_scale, train, LiftingModel, TrainConfig};

fn main() -> relpose::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let (num_train, epochs, hidden) = (arg(0, 5000.0) as usize, arg(1, 25.0) as usize, arg(2, 256.0) as usize);
    let synth = SynthConfig { perturbation: arg(3, SynthConfig::default().perturbation), ..SynthConfig::default() };

    let train_set = generate_dataset(&SynthConfig { num_examples: num_train, seed: 1, ..synth.clone() })?;
    let heldout = generate_dataset(&SynthConfig { num_examples: 500, seed: 2, id_prefix: "heldout".into(), ..synth })?;

    let net = NetConfig { hidden_width: hidden, dropout_rate: 0.1, ..NetConfig::default() };
    let untrained = LiftingModel::new(init_params(&net)?, fit_input_scale(&train_set, 0)?, 1.0, 0)?;
    println!("untrained:  {}", untrained.evaluate(&heldout)?);

    let cfg = TrainConfig { epochs, eval_every: 5, ..TrainConfig::default() };
    let (relative, _) = train(&net, &cfg, &train_set, &heldout)?;
    let rel_report = relative.evaluate(&heldout)?;
    println!("relative:   {rel_report}");

    let sup_cfg = TrainConfig { supervision_mode: SupervisionMode::Full3d, ..cfg };
    let (supervised, _) = train(&net, &sup_cfg, &train_set, &heldout)?;
    let sup_report = supervised.evaluate(&heldout)?;
    println!("supervised: {sup_report}");

    if let (Some(r), Some(s)) = (rel_report.mpjpe(Protocol::Procrustes), sup_report.mpjpe(Protocol::Procrustes)) {
        println!("procrustes ratio relative/supervised = {:.3}", r / s);
    }
    Ok(())
}
