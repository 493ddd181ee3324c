use proptest::prelude::*;

use phonelime::evaluation::{hit_at_k, random_baseline, validity, Judged, SpeakerInfo};
use phonelime::explainer::rank_scores;
use phonelime::{
    ConfidenceFlag, ExplainOptions, Explanation, PerturbationPlan, RankBy, Segment, SegmentKind, Strategy as Method,
};

const SEG: usize = 100;

fn time_explanation(scores: Vec<f64>) -> Explanation {
    let segments = (0..scores.len())
        .map(|i| Segment { index: i, start: i * SEG, end: (i + 1) * SEG, label: None })
        .collect();
    Explanation {
        audio_id: "x".into(),
        position: 0,
        phoneme: "aa".into(),
        strategy: Method::LimeTs,
        plan: PerturbationPlan::default(),
        surrogate: ExplainOptions::default(),
        intercept: 0.0,
        ranking: rank_scores(&scores, RankBy::Signed),
        scores,
        segment_kind: SegmentKind::Time,
        segments,
        confidence_flag: ConfidenceFlag::Ok,
    }
}

fn judged() -> impl Strategy<Value = Judged> {
    prop::collection::vec(-10i32..10, 1..20).prop_flat_map(|raw| {
        let d = raw.len();
        let span = d * SEG;
        (Just(raw), 0..span, 1..span).prop_map(move |(raw, start, len)| Judged {
            explanation: time_explanation(raw.into_iter().map(f64::from).collect()),
            ground_truth: Segment { index: 0, start, end: (start + len).min(span).max(start + 1), label: None },
            speaker: SpeakerInfo::default(),
        })
    })
}

fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

proptest! {
    #[test]
    fn hits_are_monotone_in_k(j in judged()) {
        let d = j.explanation.scores.len();
        let mut prev = false;
        for k in 1..=d + 2 {
            let hit = hit_at_k(&j.explanation, &j.ground_truth, k).unwrap();
            prop_assert!(hit || !prev, "hit at {} but not at {k}", k - 1);
            prev = hit;
        }
        prop_assert!(prev, "every ground truth overlaps some segment");
    }

    #[test]
    fn validity_is_nested(items in prop::collection::vec(judged(), 1..30)) {
        let [v1, v3, v5] = validity(&items).unwrap().validity();
        prop_assert!(v1 <= v3 && v3 <= v5);
    }
}

#[test]
fn baseline_converges_to_hypergeometric_rate() {
    let trials = 10_000;
    for (d, r) in [(1, 1), (2, 1), (5, 1), (12, 1), (38, 1), (12, 2), (20, 3)] {
        let relevant: Vec<usize> = (0..r).map(|i| i * 3 % d).collect();
        let got = random_baseline(&[(d, relevant)], trials, d as u64 * 31 + r as u64).unwrap();
        for (i, k) in [1usize, 3, 5].into_iter().enumerate() {
            let k = k.min(d);
            let p = 1.0 - choose(d - r, k) / choose(d, k);
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (got[i] - p).abs() <= 3.0 * sigma + 1e-12,
                "d={d} r={r} k={k}: {} vs {p}",
                got[i]
            );
        }
    }
}

