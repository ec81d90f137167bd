//! Command-line front end shared by the `relpose` binary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use crate::crowd::{
    apply_merged, load_votes, majority_merge, skill_weighted_merge, simulate_campaign, write_votes, SimulatedAnnotator,
};
use crate::eval::{evaluate, per_joint_stats, Protocol};
use crate::losses::{ProjectionMode, SupervisionMode};
use crate::net::NetConfig;
use crate::pose::{load_dataset, save_dataset, JointSet2D, JointSet3D, PoseExample};
use crate::service::{serve, system_clock, AppState, Campaign, CampaignConfig};
use crate::synth::{generate_dataset, perturb_keypoints, AnnotatorModel, SynthConfig};
use crate::trainer::{resume, train, LiftingModel, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "relpose", version, about = "3D pose lifting from relative depth labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a lifting network.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset.
    Eval(EvalArgs),
    /// Merge crowd votes into dataset labels.
    Merge(MergeArgs),
    /// Write a vote log from simulated annotators.
    SimulateAnnotators(SimulateArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Depth tolerance in mm for `r = 0` labels.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Gaussian 2D keypoint noise in pixels.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub perturbation: Option<f64>,
    /// Fraction of labels flipped uniformly at random.
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub id_prefix: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SupervisionArg {
    Relative,
    Full3d,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProjectionArg {
    Orthographic,
    Perspective,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Where the trained model is written.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON network settings; flags override it.
    #[arg(long)]
    pub net_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    #[arg(long, value_enum)]
    pub projection: Option<ProjectionArg>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Line-delimited per-epoch log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Continue from the state in the checkpoint directory.
    #[arg(long, requires = "checkpoint_dir")]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Alignment protocols to report; all by default.
    #[arg(long, value_delimiter = ',')]
    pub protocol: Vec<Protocol>,
    /// Predicted depth gaps at or below this count as ties.
    #[arg(long, default_value_t = 0.0)]
    pub tie_threshold: f64,
    /// Gaussian noise added to the 2D inputs before prediction, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write per-joint statistics and histograms as JSON.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MergeMethod {
    Majority,
    Skill,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset with merged labels replacing the original ones.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MergeMethod::Skill)]
    pub method: MergeMethod,
    /// Merged labels below this confidence become "same depth".
    #[arg(long, default_value_t = 0.0)]
    pub min_confidence: f64,
    /// Also write the merged labels (and skills) as JSON.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vote log to write.
    #[arg(long)]
    pub out: PathBuf,
    /// One annotator per value, each right with that probability.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.75, 0.75, 0.6, 0.55])]
    pub skills: Vec<f64>,
    /// Use the depth-gap dependent accuracy model instead of fixed skills.
    #[arg(long)]
    pub distance_dependent: bool,
    #[arg(long, default_value_t = 5)]
    pub votes_per_pair: usize,
    #[arg(long, default_value_t = 800)]
    pub min_delay_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub votes_per_pair: usize,
    #[arg(long, default_value_t = 800)]
    pub min_delay_ms: u64,
    #[arg(long, default_value_t = 600_000)]
    pub reservation_ms: u64,
    /// Append-only vote log; replayed on start.
    #[arg(long)]
    pub log: PathBuf,
    /// Serve UI assets from this directory instead of the built-in page.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Merge(a) => run_merge(a),
        Command::SimulateAnnotators(a) => run_simulate(a),
        Command::Serve(a) => run_serve(a),
    }
}

pub fn run_gen(a: GenArgs) -> Result<()> {
    let mut cfg: SynthConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    cfg.num_examples = a.num.unwrap_or(cfg.num_examples);
    cfg.num_pairs = a.pairs.unwrap_or(cfg.num_pairs);
    cfg.eps = a.eps.unwrap_or(cfg.eps);
    cfg.noise_sigma = a.noise_sigma.unwrap_or(cfg.noise_sigma);
    cfg.perturbation = a.perturbation.unwrap_or(cfg.perturbation);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(p) = a.id_prefix {
        cfg.id_prefix = p;
    }
    if let Some(rate) = a.flip_rate {
        cfg.label_noise = Some(AnnotatorModel::UniformFlip { rate });
    }
    let data = generate_dataset(&cfg)?;
    save_dataset(&a.out, &data)?;
    println!("wrote {} examples to {}", data.len(), a.out.display());
    Ok(())
}

pub fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let mut net: NetConfig = a.net_config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.learning_rate.unwrap_or(cfg.learning_rate);
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        net.seed = seed;
    }
    net.hidden_width = a.hidden.unwrap_or(net.hidden_width);
    net.dropout_rate = a.dropout.unwrap_or(net.dropout_rate);
    if let Some(s) = a.supervision {
        cfg.supervision_mode = match s {
            SupervisionArg::Relative => SupervisionMode::Relative,
            SupervisionArg::Full3d => SupervisionMode::Full3d,
        };
    }
    if let Some(p) = a.projection {
        cfg.projection_mode = match p {
            ProjectionArg::Orthographic => ProjectionMode::Orthographic,
            ProjectionArg::Perspective => ProjectionMode::Perspective,
        };
    }
    cfg.checkpoint_dir = a.checkpoint_dir.or(cfg.checkpoint_dir);
    cfg.log_path = a.log.or(cfg.log_path);
    cfg.skeleton_path = a.skeleton.or(cfg.skeleton_path);
    cfg.validate()?;

    let train_set = load_dataset(&a.train)?;
    let heldout = a.heldout.as_deref().map(load_dataset).transpose()?.unwrap_or_default();
    if let Some(first) = train_set.first() {
        net.input_joints = first.num_joints();
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let (model, log) = if a.resume { resume(&cfg, &train_set, &heldout)? } else { train(&net, &cfg, &train_set, &heldout)? };
    model.save(&a.model)?;
    if let Some(last) = log.epochs.last() {
        println!("epoch {} loss {:.5}", last.epoch, last.total);
    }
    if let Some(report) = log.last_heldout() {
        println!("heldout {report}");
    }
    println!("saved model to {}", a.model.display());
    Ok(())
}

/// Predictions for `examples`, optionally from keypoints with added noise.
pub fn predict_with_noise(
    model: &LiftingModel,
    examples: &[PoseExample],
    sigma: f64,
    seed: u64,
) -> Result<Vec<JointSet3D>> {
    if sigma == 0.0 {
        return model.predict_examples(examples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<JointSet2D> = examples
        .iter()
        .map(|e| perturb_keypoints(&e.joints2d, sigma, model.root, &mut rng))
        .collect::<Result<_>>()?;
    model.predict(&noisy)
}

pub fn run_eval(a: EvalArgs) -> Result<()> {
    let model = LiftingModel::load(&a.model)?;
    let data = load_dataset(&a.dataset)?;
    let protocols = if a.protocol.is_empty() { Protocol::ALL.to_vec() } else { a.protocol.clone() };
    let preds = predict_with_noise(&model, &data, a.noise_sigma, a.seed)?;
    let report = evaluate(&preds, &data, &protocols, a.tie_threshold)?;
    println!("{report}");
    let (p3, t3): (Vec<JointSet3D>, Vec<JointSet3D>) =
        preds.iter().zip(&data).filter_map(|(p, e)| e.joints3d.clone().map(|t| (p.clone(), t))).unzip();
    if let Some(path) = &a.stats_out {
        if t3.is_empty() {
            return Err(Error::MissingInput("per-joint statistics need 3D ground truth".into()));
        }
        let stats = protocols.iter().map(|&p| per_joint_stats(&p3, &t3, p, a.bin_width)).collect::<Result<Vec<_>>>()?;
        for s in &stats {
            let pct: Vec<String> = s.percentiles.iter().map(|(p, v)| format!("p{p:.0}={v:.1}")).collect();
            println!("{}: {}", s.protocol, pct.join(" "));
        }
        write_json(path, &stats)?;
    }
    Ok(())
}

pub fn run_merge(a: MergeArgs) -> Result<()> {
    let votes = load_votes(&a.votes)?;
    let data = load_dataset(&a.dataset)?;
    let (labels, skills) = match a.method {
        MergeMethod::Majority => (majority_merge(&votes)?, None),
        MergeMethod::Skill => {
            let m = skill_weighted_merge(&votes)?;
            if !m.converged {
                log::warn!("skill estimation stopped after {} iterations without converging", m.iterations);
            }
            for (who, s) in &m.skills {
                println!("skill {who} {s:.3}");
            }
            (m.labels, Some(m.skills))
        }
    };
    let merged = apply_merged(&data, &labels, a.min_confidence)?;
    save_dataset(&a.out, &merged)?;
    if let Some(path) = &a.labels_out {
        write_json(path, &serde_json::json!({ "labels": labels, "skills": skills }))?;
    }
    let ties = labels.iter().filter(|l| l.tie).count();
    println!(
        "merged {} votes into {} labels ({ties} ties) over {} examples",
        votes.len(),
        labels.len(),
        merged.len()
    );
    Ok(())
}

pub fn run_simulate(a: SimulateArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let annotators: Vec<SimulatedAnnotator> = a
        .skills
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let id = format!("sim-{i}");
            if a.distance_dependent {
                SimulatedAnnotator { id, model: AnnotatorModel::calibrated() }
            } else {
                SimulatedAnnotator::with_skill(id, s)
            }
        })
        .collect();
    let votes = simulate_campaign(&data, &annotators, a.votes_per_pair, a.min_delay_ms, a.seed)?;
    write_votes(BufWriter::new(File::create(&a.out)?), &votes)?;
    println!("wrote {} votes to {}", votes.len(), a.out.display());
    Ok(())
}

pub fn run_serve(a: ServeArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let skeleton = match &a.skeleton {
        Some(p) => crate::pose::Skeleton::load(p)?,
        None => crate::pose::Skeleton::human17(),
    };
    let cfg = CampaignConfig {
        votes_per_pair: a.votes_per_pair,
        min_delay_ms: a.min_delay_ms,
        reservation_ms: a.reservation_ms,
    };
    let campaign = Campaign::new(&data, Some(&skeleton), cfg)?.with_log(&a.log)?;
    let p = campaign.progress();
    println!("{} pairs, {} votes already collected", p.total_pairs, p.votes_collected);
    let app = AppState::new(campaign, system_clock());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(SocketAddr::new(a.host, a.port), app, a.static_dir))
}
