//! Runs an annotation campaign in-process with scripted annotators, merges the
//! resulting vote log, and optionally serves the same campaign over HTTP.
//!
//! Usage: cargo run --example annotation_service [serve [port]]

use std::net::SocketAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relpose::crowd::{load_votes, merged_correctness, skill_weighted_merge, Choice};
use relpose::pose::Skeleton;
use relpose::service::{serve, system_clock, AppState, Campaign, CampaignConfig, VoteRequest};
use relpose::synth::{generate_dataset, SynthConfig};

fn main() -> relpose::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let data = generate_dataset(&SynthConfig { num_examples: 30, num_pairs: 2, seed: 3, ..SynthConfig::default() })?;
    let dir = std::env::temp_dir().join(format!("relpose_campaign_{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("votes.jsonl");

    let skeleton = Skeleton::human17();
    let mut campaign = Campaign::new(&data, Some(&skeleton), CampaignConfig::default())?.with_log(&log)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let skills = [("ana", 0.92), ("ben", 0.8), ("cho", 0.7), ("dev", 0.65), ("eli", 0.6)];
    let mut now = 0u64;
    let mut rejected = 0;
    'outer: loop {
        let mut served = 0;
        for (who, skill) in skills {
            let Some(task) = campaign.next_task(who, now) else { continue };
            served += 1;
            let z = data.iter().find(|e| e.id == task.image_id).unwrap().joints3d.as_ref().unwrap().depths();
            let truth_j = z[task.j] < z[task.k];
            let says_j = if rng.random_bool(skill) { truth_j } else { !truth_j };
            // occasionally click before the minimum viewing time
            let elapsed = if rng.random_bool(0.05) { 300 } else { rng.random_range(800..4000) };
            now += elapsed;
            let req = VoteRequest {
                token: task.token.clone(),
                choice: if says_j { Choice::JCloser } else { Choice::KCloser },
                elapsed_ms: elapsed,
                annotator: None,
            };
            if campaign.submit_vote(&req, now).is_err() {
                rejected += 1;
            }
        }
        if served == 0 {
            break 'outer;
        }
    }
    let p = campaign.progress();
    println!("{} of {} pairs complete, {} votes, {rejected} too-fast submissions rejected", p.pairs_complete, p.total_pairs, p.votes_collected);
    for (who, n) in &p.per_annotator {
        println!("  {who}: {n} votes");
    }

    let votes = load_votes(&log)?;
    let merged = skill_weighted_merge(&votes)?;
    let correct = merged_correctness(&merged.labels, &data);
    println!(
        "merged {} labels from {}: {:.1}% correct",
        merged.labels.len(),
        log.display(),
        100.0 * correct.iter().filter(|c| c.1).count() as f64 / correct.len() as f64
    );

    if args.first().is_some_and(|a| a == "serve") {
        let port = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8080);
        let fresh = Campaign::new(&data, Some(&skeleton), CampaignConfig::default())?.with_log(dir.join("live.jsonl"))?;
        println!("serving a fresh campaign on http://127.0.0.1:{port}/ (ctrl-c to stop)");
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(serve(SocketAddr::from(([127, 0, 0, 1], port)), AppState::new(fresh, system_clock()), None))?;
    }
    Ok(())
}
