use relpose::crowd::{label_posteriors, majority_merge, skill_weighted_merge, Choice, RawVote};
use relpose::pose::Relation;

fn vote(pair: usize, who: &str, choice: Choice) -> RawVote {
    RawVote {
        image_id: format!("p{pair:02}"),
        j: 0,
        k: 1,
        annotator_id: who.into(),
        choice,
        timestamp: pair as u64,
        elapsed_ms: 1000,
    }
}

/// A is always right (joint 0 closer). B and C are both wrong on pairs 12..14,
/// where they outvote A; B is also wrong on 0..4 and C on 4..12.
fn disputed_instance() -> Vec<RawVote> {
    let mut votes = Vec::new();
    for i in 0..20 {
        votes.push(vote(i, "A", Choice::JCloser));
        votes.push(vote(i, "B", if i < 4 || (12..14).contains(&i) { Choice::KCloser } else { Choice::JCloser }));
        votes.push(vote(i, "C", if (4..14).contains(&i) { Choice::KCloser } else { Choice::JCloser }));
    }
    votes
}

/// Marginal `P(joint 0 closer)` per pair by summing the joint likelihood over
/// all 2^n label assignments.
fn enumerate_marginals(votes: &[RawVote], skills: &[(&str, f64)], n: usize) -> Vec<f64> {
    let skill = |who: &str| skills.iter().find(|s| s.0 == who).unwrap().1;
    // likelihood of pair i's votes given label true (0 closer) / false
    let mut like = vec![[1.0f64; 2]; n];
    for v in votes {
        let i: usize = v.image_id[1..].parse().unwrap();
        let s = skill(&v.annotator_id);
        let says_zero = v.choice == Choice::JCloser;
        like[i][1] *= if says_zero { s } else { 1.0 - s };
        like[i][0] *= if says_zero { 1.0 - s } else { s };
    }
    let mut numer = vec![0.0; n];
    let mut total = 0.0;
    for assignment in 0u32..(1 << n) {
        let p: f64 = (0..n).map(|i| like[i][((assignment >> i) & 1) as usize]).product();
        total += p;
        for (i, num) in numer.iter_mut().enumerate() {
            if (assignment >> i) & 1 == 1 {
                *num += p;
            }
        }
    }
    numer.iter().map(|x| x / total).collect()
}

#[test]
fn em_posteriors_match_brute_force_enumeration() {
    let votes = disputed_instance();
    let merged = skill_weighted_merge(&votes).unwrap();
    assert!(merged.iterations <= 100);
    let skills: Vec<(&str, f64)> = merged.skills.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let oracle = enumerate_marginals(&votes, &skills, 20);
    for (label, q) in merged.labels.iter().zip(&oracle) {
        let p_zero = if label.r == Relation::Closer { label.confidence } else { 1.0 - label.confidence };
        assert!((p_zero - q).abs() < 1e-9, "{}: {p_zero} vs {q}", label.image_id);
    }
    assert!(merged.skills["A"] > merged.skills["B"] && merged.skills["B"] > merged.skills["C"]);
    for label in &merged.labels[12..14] {
        assert_eq!(label.r, Relation::Closer, "{} should side with A", label.image_id);
    }
}

#[test]
fn true_skills_favour_the_reliable_annotator() {
    let votes = disputed_instance();
    let oracle = enumerate_marginals(&votes, &[("A", 0.9), ("B", 0.55), ("C", 0.55)], 20);
    for q in &oracle[12..14] {
        assert!(*q > 0.5);
    }
    // the library's closed form agrees with enumeration under fixed skills
    let items: Vec<Vec<(usize, bool)>> = (0..20)
        .map(|i| {
            votes
                .iter()
                .filter(|v| v.image_id == format!("p{i:02}"))
                .map(|v| (["A", "B", "C"].iter().position(|a| *a == v.annotator_id).unwrap(), v.choice == Choice::JCloser))
                .collect()
        })
        .collect();
    let closed = label_posteriors(&items, &[0.9, 0.55, 0.55]);
    for (a, b) in closed.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn homogeneous_skills_reproduce_majority_labels() {
    let mut votes = Vec::new();
    for i in 0..20 {
        for (n, who) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            let closer = (i * 7 + n * 3) % 5 < 1 + i % 4;
            votes.push(vote(i, who, if closer { Choice::JCloser } else { Choice::KCloser }));
        }
    }
    let items: Vec<Vec<(usize, bool)>> = (0..20)
        .map(|i| votes.iter().filter(|v| v.image_id == format!("p{i:02}")).enumerate().map(|(u, v)| (u, v.choice == Choice::JCloser)).collect())
        .collect();
    let majority = majority_merge(&votes).unwrap();
    for skill in [0.6, 0.7, 0.95] {
        let q = label_posteriors(&items, &[skill; 5]);
        for (m, q) in majority.iter().zip(&q) {
            let r = if *q > 0.5 { Relation::Closer } else { Relation::Farther };
            assert_eq!(m.r, r, "{}", m.image_id);
        }
    }
}

#[test]
fn single_vote_confidence_is_the_clamped_skill() {
    let merged = skill_weighted_merge(&[vote(0, "solo", Choice::KCloser)]).unwrap();
    let label = &merged.labels[0];
    assert_eq!(label.r, Relation::Farther);
    assert!((label.confidence - merged.skills["solo"]).abs() < 1e-12);
    assert!((0.51..=0.99).contains(&label.confidence));
}

#[test]
fn majority_merge_examples() {
    let mk = |pattern: &[bool]| -> Vec<RawVote> {
        pattern
            .iter()
            .enumerate()
            .map(|(n, &j)| vote(0, &format!("u{n}"), if j { Choice::JCloser } else { Choice::KCloser }))
            .collect()
    };
    let unanimous = majority_merge(&mk(&[true; 5])).unwrap();
    assert_eq!((unanimous[0].r, unanimous[0].confidence), (Relation::Closer, 1.0));
    let split = majority_merge(&mk(&[false, false, true, false, true])).unwrap();
    assert_eq!(split[0].r, Relation::Farther);
    assert!((split[0].confidence - 0.6).abs() < 1e-12);
    let tie = majority_merge(&mk(&[true, false, true, false])).unwrap();
    assert!(tie[0].tie && tie[0].confidence > 0.5);
    assert_eq!(tie[0].r, Relation::Closer);
}
