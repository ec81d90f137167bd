//! Simulates a crowd campaign with annotators of mixed reliability and
//! compares majority voting with skill-weighted merging.
//!
//! Usage: cargo run --release --example crowd_merge [num_pairs] [seed]

use relpose::crowd::{
    accuracy_vs_distance, majority_merge, merged_correctness, simulate_campaign, skill_weighted_merge, vote_correctness,
    SimulatedAnnotator,
};
use relpose::synth::{generate_dataset, AnnotatorModel, SynthConfig};

fn accuracy(samples: &[(f64, bool)]) -> f64 {
    samples.iter().filter(|s| s.1).count() as f64 / samples.len() as f64
}

fn main() -> relpose::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let num_pairs = args.first().copied().unwrap_or(1000) as usize;
    let seed = args.get(1).copied().unwrap_or(0);

    let data = generate_dataset(&SynthConfig { num_examples: num_pairs, seed, ..SynthConfig::default() })?;
    let skills = [0.9, 0.75, 0.75, 0.6, 0.55];
    let annotators: Vec<_> = skills.iter().enumerate().map(|(i, &s)| SimulatedAnnotator::with_skill(format!("a{i}"), s)).collect();
    let votes = simulate_campaign(&data, &annotators, 5, 800, seed)?;

    let majority = majority_merge(&votes)?;
    let merged = skill_weighted_merge(&votes)?;
    println!("raw votes   {:.1}%", 100.0 * accuracy(&vote_correctness(&votes, &data)));
    println!("majority    {:.1}%", 100.0 * accuracy(&merged_correctness(&majority, &data)));
    println!("skill EM    {:.1}%  ({} iterations)", 100.0 * accuracy(&merged_correctness(&merged.labels, &data)), merged.iterations);
    for ((who, est), truth) in merged.skills.iter().zip(skills) {
        println!("  {who}: estimated {est:.3}, true {truth:.2}");
    }

    // annotators whose accuracy grows with the depth gap
    let calibrated: Vec<_> = (0..5).map(|i| SimulatedAnnotator { id: format!("c{i}"), model: AnnotatorModel::calibrated() }).collect();
    let votes = simulate_campaign(&data, &calibrated, 5, 800, seed + 1)?;
    let edges: Vec<f64> = (0..=8).map(|i| i as f64 * 50.0).chain([f64::INFINITY]).collect();
    println!("\ndepth gap (mm)   raw vote accuracy");
    for bin in accuracy_vs_distance(&vote_correctness(&votes, &data), &edges)? {
        println!("{:>5.0} - {:<6.0}  {:5.1}%  (n={})", bin.lo, bin.hi, 100.0 * bin.accuracy, bin.count);
    }
    Ok(())
}
