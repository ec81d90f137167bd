//! Merging repeated binary "which joint is closer" votes into one label per
//! pair, with optional per-annotator skill estimation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PairLabel, PoseExample, Relation, RelativeAnnotationSet};
use crate::synth::AnnotatorModel;

/// Skill bounds used by [`skill_weighted_merge`].
pub const MIN_SKILL: f64 = 0.51;
pub const MAX_SKILL: f64 = 0.99;
pub const INITIAL_SKILL: f64 = 0.7;
pub const EM_TOLERANCE: f64 = 1e-6;
pub const EM_MAX_ITERATIONS: usize = 100;
/// Confidence reported for an exact tie.
pub const TIE_CONFIDENCE: f64 = 0.5 + 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    JCloser,
    KCloser,
}

/// One annotator's answer for one pair, as stored in the vote log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVote {
    pub image_id: String,
    pub j: usize,
    pub k: usize,
    pub annotator_id: String,
    pub choice: Choice,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl RawVote {
    /// Pair as `(lower, higher)` joint index and whether the lower one was
    /// chosen as closer.
    pub fn canonical(&self) -> (usize, usize, bool) {
        let j_closer = self.choice == Choice::JCloser;
        if self.j < self.k {
            (self.j, self.k, j_closer)
        } else {
            (self.k, self.j, !j_closer)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.j == self.k {
            return Err(Error::validation(format!("vote on self-pair ({}, {})", self.j, self.k)));
        }
        Ok(())
    }
}

/// Key identifying one pair of one image, with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub image_id: String,
    pub a: usize,
    pub b: usize,
}

/// Merged label in canonical orientation: `r = −1` means joint `j` (the lower
/// index) is closer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedLabel {
    pub image_id: String,
    pub j: usize,
    pub k: usize,
    pub r: Relation,
    /// Probability of the reported label, in (0.5, 1].
    pub confidence: f64,
    pub num_votes: usize,
    pub tie: bool,
}

/// Votes grouped per pair, in key order.
pub fn group_votes(votes: &[RawVote]) -> Result<BTreeMap<PairKey, Vec<(String, bool)>>> {
    let mut groups: BTreeMap<PairKey, Vec<(String, bool)>> = BTreeMap::new();
    for v in votes {
        v.validate()?;
        let (a, b, a_closer) = v.canonical();
        groups
            .entry(PairKey { image_id: v.image_id.clone(), a, b })
            .or_default()
            .push((v.annotator_id.clone(), a_closer));
    }
    Ok(groups)
}

/// Label from `P(a closer) = q`; exact ties favour the lower index.
fn label_from_posterior(key: &PairKey, q: f64, num_votes: usize) -> MergedLabel {
    let tie = q == 0.5;
    let (r, confidence) = if tie {
        (Relation::Closer, TIE_CONFIDENCE)
    } else if q > 0.5 {
        (Relation::Closer, q)
    } else {
        (Relation::Farther, 1.0 - q)
    };
    MergedLabel { image_id: key.image_id.clone(), j: key.a, k: key.b, r, confidence, num_votes, tie }
}

pub fn majority_merge(votes: &[RawVote]) -> Result<Vec<MergedLabel>> {
    Ok(group_votes(votes)?
        .iter()
        .map(|(key, vs)| {
            let a_votes = vs.iter().filter(|(_, a)| *a).count();
            label_from_posterior(key, a_votes as f64 / vs.len() as f64, vs.len())
        })
        .collect())
}

/// One pair's votes as `(annotator index, lower joint chosen)`.
pub type ItemVotes = Vec<(usize, bool)>;

/// `P(lower joint closer)` per item under a uniform prior and the given
/// annotator accuracies.
pub fn label_posteriors(items: &[ItemVotes], skills: &[f64]) -> Vec<f64> {
    items
        .iter()
        .map(|votes| {
            let logit: f64 = votes
                .iter()
                .map(|&(u, a)| {
                    let w = (skills[u] / (1.0 - skills[u])).ln();
                    if a {
                        w
                    } else {
                        -w
                    }
                })
                .sum();
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillMerge {
    pub labels: Vec<MergedLabel>,
    pub skills: BTreeMap<String, f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit; the last iterate is returned.
    pub converged: bool,
}

/// One-coin EM over binary labels and per-annotator accuracy.
pub fn skill_weighted_merge(votes: &[RawVote]) -> Result<SkillMerge> {
    let groups = group_votes(votes)?;
    let annotators: Vec<String> = votes.iter().map(|v| v.annotator_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let index_of: BTreeMap<&str, usize> = annotators.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let items: Vec<ItemVotes> = groups
        .values()
        .map(|vs| vs.iter().map(|(a, c)| (index_of[a.as_str()], *c)).collect())
        .collect();

    let mut skills = vec![INITIAL_SKILL; annotators.len()];
    let mut q = label_posteriors(&items, &skills);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        let mut agree = vec![0.0; skills.len()];
        let mut count = vec![0usize; skills.len()];
        for (votes, &qi) in items.iter().zip(&q) {
            for &(u, a) in votes {
                agree[u] += if a { qi } else { 1.0 - qi };
                count[u] += 1;
            }
        }
        for ((s, a), n) in skills.iter_mut().zip(&agree).zip(&count) {
            *s = (a / *n as f64).clamp(MIN_SKILL, MAX_SKILL);
        }
        let next = label_posteriors(&items, &skills);
        let change = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if change < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("skill EM stopped after {iterations} iterations without converging");
    }
    let labels = groups.iter().zip(&q).map(|((key, vs), &qi)| label_from_posterior(key, qi, vs.len())).collect();
    let skills = annotators.into_iter().zip(skills).collect();
    Ok(SkillMerge { labels, skills, iterations, converged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBin {
    pub lo: f64,
    pub hi: f64,
    pub correct: usize,
    pub count: usize,
    pub accuracy: f64,
}

/// Fraction of correct labels per depth-gap bin `[edges[i], edges[i+1])`.
/// Samples outside the edges are ignored and empty bins are omitted.
pub fn accuracy_vs_distance(samples: &[(f64, bool)], edges: &[f64]) -> Result<Vec<AccuracyBin>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("bin edges must be strictly increasing, at least two".into()));
    }
    let mut bins: Vec<(usize, usize)> = vec![(0, 0); edges.len() - 1];
    for &(gap, correct) in samples {
        if let Some(i) = edges.windows(2).position(|w| w[0] <= gap && gap < w[1]) {
            bins[i].1 += 1;
            bins[i].0 += correct as usize;
        }
    }
    Ok(bins
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(i, &(c, n))| AccuracyBin { lo: edges[i], hi: edges[i + 1], correct: c, count: n, accuracy: c as f64 / n as f64 })
        .collect())
}

fn examples_by_id(examples: &[PoseExample]) -> BTreeMap<&str, &PoseExample> {
    examples.iter().map(|e| (e.id.as_str(), e)).collect()
}

/// `(|Δz|, correct)` for every merged label whose image has 3D ground truth.
pub fn merged_correctness(labels: &[MergedLabel], examples: &[PoseExample]) -> Vec<(f64, bool)> {
    let by_id = examples_by_id(examples);
    labels
        .iter()
        .filter_map(|l| {
            let z = by_id.get(l.image_id.as_str())?.joints3d.as_ref()?.depths();
            let truth = z[l.j] < z[l.k];
            Some(((z[l.j] - z[l.k]).abs(), truth == (l.r == Relation::Closer)))
        })
        .collect()
}

/// `(|Δz|, correct)` for every raw vote whose image has 3D ground truth.
pub fn vote_correctness(votes: &[RawVote], examples: &[PoseExample]) -> Vec<(f64, bool)> {
    let by_id = examples_by_id(examples);
    votes
        .iter()
        .filter_map(|v| {
            let z = by_id.get(v.image_id.as_str())?.joints3d.as_ref()?.depths();
            let truth = z[v.j] < z[v.k];
            Some(((z[v.j] - z[v.k]).abs(), truth == (v.choice == Choice::JCloser)))
        })
        .collect()
}

/// Replaces each example's annotations with its merged labels. Labels with
/// confidence below `min_confidence` become `r = 0`. Examples without any
/// merged label are dropped.
pub fn apply_merged(examples: &[PoseExample], labels: &[MergedLabel], min_confidence: f64) -> Result<Vec<PoseExample>> {
    let mut per_image: BTreeMap<&str, Vec<PairLabel>> = BTreeMap::new();
    for l in labels {
        let r = if l.confidence < min_confidence { Relation::Same } else { l.r };
        per_image.entry(l.image_id.as_str()).or_default().push(PairLabel { j: l.j, k: l.k, r });
    }
    let known: BTreeSet<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    if let Some(unknown) = per_image.keys().find(|id| !known.contains(*id)) {
        return Err(Error::validation(format!("merged label for unknown image {unknown}")));
    }
    let mut out = Vec::new();
    for ex in examples {
        let Some(pairs) = per_image.remove(ex.id.as_str()) else { continue };
        let annotations = RelativeAnnotationSet::new(pairs, 0.0, ex.num_joints())?;
        out.push(PoseExample { annotations, ..ex.clone() });
    }
    if out.len() < examples.len() {
        log::warn!("{} examples had no merged labels and were dropped", examples.len() - out.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAnnotator {
    pub id: String,
    pub model: AnnotatorModel,
}

impl SimulatedAnnotator {
    /// Annotator that is right with probability `skill` regardless of depth.
    pub fn with_skill(id: impl Into<String>, skill: f64) -> Self {
        Self { id: id.into(), model: AnnotatorModel::UniformFlip { rate: 1.0 - skill } }
    }
}

/// Votes from `votes_per_pair` distinct simulated annotators on every
/// annotated pair of every example; truth comes from the camera-frame 3D.
pub fn simulate_campaign(
    examples: &[PoseExample],
    annotators: &[SimulatedAnnotator],
    votes_per_pair: usize,
    min_delay_ms: u64,
    seed: u64,
) -> Result<Vec<RawVote>> {
    if votes_per_pair == 0 || votes_per_pair > annotators.len() {
        return Err(Error::InvalidInput(format!(
            "{votes_per_pair} votes per pair needs that many of the {} annotators",
            annotators.len()
        )));
    }
    for a in annotators {
        a.model.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut votes = Vec::new();
    let mut clock = 0u64;
    for ex in examples {
        let truth = ex.joints3d.as_ref().ok_or_else(|| Error::MissingInput(format!("example {} has no 3D", ex.id)))?;
        let z = truth.depths();
        for p in ex.annotations.pairs() {
            let j_closer = z[p.j] < z[p.k];
            let gap = (z[p.j] - z[p.k]).abs();
            for u in index::sample(&mut rng, annotators.len(), votes_per_pair) {
                let correct = rng.random::<f64>() < annotators[u].model.accuracy(gap);
                let elapsed_ms = min_delay_ms + rng.random_range(0..2000);
                clock += elapsed_ms;
                votes.push(RawVote {
                    image_id: ex.id.clone(),
                    j: p.j,
                    k: p.k,
                    annotator_id: annotators[u].id.clone(),
                    choice: if correct == j_closer { Choice::JCloser } else { Choice::KCloser },
                    timestamp: clock,
                    elapsed_ms,
                });
            }
        }
    }
    Ok(votes)
}

pub fn read_votes(reader: impl BufRead) -> Result<Vec<RawVote>> {
    let mut votes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vote: RawVote = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        vote.validate().map_err(|e| e.at_line(i + 1))?;
        votes.push(vote);
    }
    Ok(votes)
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<RawVote>> {
    read_votes(BufReader::new(File::open(path)?))
}

pub fn write_votes(mut writer: impl Write, votes: &[RawVote]) -> Result<()> {
    for v in votes {
        serde_json::to_writer(&mut writer, v)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(image: &str, j: usize, k: usize, who: &str, choice: Choice) -> RawVote {
        RawVote { image_id: image.into(), j, k, annotator_id: who.into(), choice, timestamp: 0, elapsed_ms: 900 }
    }

    fn pair_votes(j_votes: usize, k_votes: usize) -> Vec<RawVote> {
        (0..j_votes)
            .map(|i| vote("im", 3, 7, &format!("a{i}"), Choice::JCloser))
            .chain((0..k_votes).map(|i| vote("im", 3, 7, &format!("b{i}"), Choice::KCloser)))
            .collect()
    }

    #[test]
    fn majority_examples() {
        let m = majority_merge(&pair_votes(5, 0)).unwrap();
        assert_eq!((m[0].r, m[0].confidence, m[0].tie), (Relation::Closer, 1.0, false));
        let m = majority_merge(&pair_votes(2, 3)).unwrap();
        assert_eq!(m[0].r, Relation::Farther);
        assert!((m[0].confidence - 0.6).abs() < 1e-12);
        let m = majority_merge(&pair_votes(2, 2)).unwrap();
        assert!(m[0].tie && m[0].confidence > 0.5 && m[0].confidence < 0.5 + 1e-6);
        assert_eq!((m[0].j, m[0].k, m[0].r), (3, 7, Relation::Closer));
    }

    #[test]
    fn orientation_is_canonical() {
        let votes = vec![vote("im", 7, 3, "a", Choice::KCloser), vote("im", 3, 7, "b", Choice::JCloser)];
        let m = majority_merge(&votes).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].j, m[0].k, m[0].r, m[0].confidence), (3, 7, Relation::Closer, 1.0));
        assert!(majority_merge(&[vote("im", 2, 2, "a", Choice::JCloser)]).is_err());
    }

    #[test]
    fn single_vote_reports_clamped_skill() {
        let r = skill_weighted_merge(&[vote("im", 1, 2, "solo", Choice::KCloser)]).unwrap();
        assert!(r.converged);
        assert_eq!(r.labels[0].r, Relation::Farther);
        assert!((r.labels[0].confidence - r.skills["solo"]).abs() < 1e-12);
        assert!((MIN_SKILL..=MAX_SKILL).contains(&r.skills["solo"]));
    }

    #[test]
    fn equal_skills_reproduce_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<ItemVotes> = (0..200)
            .map(|_| {
                let n = rng.random_range(1..=6);
                (0..n).map(|u| (u, rng.random_bool(0.6))).collect()
            })
            .collect();
        let q = label_posteriors(&items, &[0.8; 6]);
        for (votes, qi) in items.iter().zip(q) {
            let a = votes.iter().filter(|v| v.1).count() * 2;
            match a.cmp(&votes.len()) {
                std::cmp::Ordering::Greater => assert!(qi > 0.5),
                std::cmp::Ordering::Less => assert!(qi < 0.5),
                std::cmp::Ordering::Equal => assert_eq!(qi, 0.5),
            }
        }
    }

    #[test]
    fn accuracy_bins() {
        let samples = [(10.0, true), (20.0, false), (150.0, true), (500.0, true)];
        let bins = accuracy_vs_distance(&samples, &[0.0, 100.0, 200.0, 300.0]).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!((bins[0].count, bins[0].accuracy), (2, 0.5));
        assert_eq!((bins[1].lo, bins[1].count, bins[1].accuracy), (100.0, 1, 1.0));
        assert!(accuracy_vs_distance(&samples, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn vote_log_round_trip() {
        let votes = pair_votes(2, 1);
        let mut buf = Vec::new();
        write_votes(&mut buf, &votes).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"choice\":\"j_closer\""));
        assert_eq!(read_votes(buf.as_slice()).unwrap(), votes);
        let bad = b"{\"image_id\":\"x\"}\n";
        assert!(matches!(read_votes(&bad[..]), Err(Error::Parse { line: 1, .. })));
    }
}
