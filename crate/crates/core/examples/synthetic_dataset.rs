//! Generates a small synthetic dataset, writes it as line-delimited JSON and
//! summarises the relative labels it contains.
//!
//! Usage: cargo run --example synthetic_dataset [out.jsonl] [num] [pairs] [eps_mm]

use relpose::pose::{load_dataset, save_dataset, Relation};
use relpose::synth::{generate_dataset, pair_gaps, SynthConfig};

fn main() -> relpose::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| std::env::temp_dir().join("relpose_synth.jsonl").display().to_string());
    let num = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let pairs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let eps = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(50.0);

    let cfg = SynthConfig { num_examples: num, num_pairs: pairs, eps, noise_sigma: 2.0, seed: 7, ..SynthConfig::default() };
    let data = generate_dataset(&cfg)?;
    save_dataset(&out, &data)?;
    assert_eq!(load_dataset(&out)?, data);
    println!("wrote {} examples to {out}", data.len());

    let (mut closer, mut farther, mut same) = (0, 0, 0);
    let mut gaps = Vec::new();
    for ex in &data {
        for p in ex.annotations.pairs() {
            match p.r {
                Relation::Closer => closer += 1,
                Relation::Farther => farther += 1,
                Relation::Same => same += 1,
            }
        }
        if let Some(p3) = &ex.joints3d {
            gaps.extend(pair_gaps(p3, &ex.annotations));
        }
    }
    gaps.sort_by(f64::total_cmp);
    println!("labels: {closer} closer, {farther} farther, {same} within {eps} mm");
    println!(
        "depth gap of labelled pairs: median {:.0} mm, 90th percentile {:.0} mm",
        gaps[gaps.len() / 2],
        gaps[gaps.len() * 9 / 10]
    );

    let first = &data[0];
    let cam = first.camera.as_ref().expect("synthetic examples carry their camera");
    println!(
        "first example {}: camera at {:?}, fx {:.0}",
        first.id,
        cam.extrinsics.center().map(|v| v.round()).as_slice(),
        cam.intrinsics.fx()
    );
    Ok(())
}
