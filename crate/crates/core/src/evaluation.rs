//! Ground-truth validity of explanations.
//!
//! An explanation of phoneme `p` is a hit at `k` when the annotated segment `p`
//! was uttered in appears among the top `k` ranked segments. For time
//! segmentations any time segment overlapping the annotated segment by at
//! least one sample counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alignment::{align, AlignmentResult, CostTable, MistakeKey, OpKind};
use crate::audio::{overlap_samples, Segment, SegmentKind, Segmentation};
use crate::error::{Error, Result};
use crate::explainer::Explanation;
use crate::perturbation::Strategy;
use crate::recognizer::Transcription;

/// Rank cutoffs reported by every validity report.
pub const CUTOFFS: [usize; 3] = [1, 3, 5];

pub const DEFAULT_BASELINE_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeakerInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
}

/// Annotated segment of every recognized phoneme, `None` for phonemes that do
/// not match the reference.
///
/// The reference is the label sequence of `expert`; recognized phonemes are
/// aligned against it and matched positions inherit the reference segment.
pub fn ground_truth_map(
    transcription: &Transcription,
    expert: &Segmentation,
    costs: CostTable,
) -> Vec<Option<Segment>> {
    align(&expert.labels(), transcription.phonemes(), costs)
        .hyp_to_ref(transcription.len())
        .into_iter()
        .map(|r| r.and_then(|r| expert.get(r).cloned()))
        .collect()
}

/// Segments of an explanation that count as the ground truth `gt`.
pub fn relevant_segments(kind: SegmentKind, segments: &[Segment], gt: &Segment) -> Vec<usize> {
    match kind {
        SegmentKind::Expert => segments
            .iter()
            .filter(|s| s.index == gt.index)
            .map(|s| s.index)
            .collect(),
        SegmentKind::Time => segments
            .iter()
            .filter(|s| overlap_samples(s, gt) > 0)
            .map(|s| s.index)
            .collect(),
    }
}

/// Whether `gt` is among the top `k` segments of `expl` (`k` clamped to `d`).
pub fn hit_at_k(expl: &Explanation, gt: &Segment, k: usize) -> Result<bool> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let relevant = relevant_segments(expl.segment_kind, &expl.segments, gt);
    Ok(expl.top(k).iter().any(|i| relevant.contains(i)))
}

/// An explanation paired with its annotated ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Judged {
    pub explanation: Explanation,
    pub ground_truth: Segment,
    #[serde(default)]
    pub speaker: SpeakerInfo,
}

impl Judged {
    fn relevant(&self) -> Vec<usize> {
        relevant_segments(
            self.explanation.segment_kind,
            &self.explanation.segments,
            &self.ground_truth,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityCounts {
    pub n: usize,
    pub n_1: usize,
    pub n_3: usize,
    pub n_5: usize,
}

impl ValidityCounts {
    pub fn validity(&self) -> [f64; 3] {
        let n = self.n as f64;
        [self.n_1 as f64 / n, self.n_3 as f64 / n, self.n_5 as f64 / n]
    }
}

pub fn validity(items: &[Judged]) -> Result<ValidityCounts> {
    if items.is_empty() {
        return Err(Error::Empty("no explanations to evaluate"));
    }
    let mut hits = [0usize; 3];
    for item in items {
        for (slot, &k) in hits.iter_mut().zip(&CUTOFFS) {
            *slot += hit_at_k(&item.explanation, &item.ground_truth, k)? as usize;
        }
    }
    let counts = ValidityCounts {
        n: items.len(),
        n_1: hits[0],
        n_3: hits[1],
        n_5: hits[2],
    };
    assert!(
        counts.n_1 <= counts.n_3 && counts.n_3 <= counts.n_5,
        "validity nesting violated: {counts:?}"
    );
    Ok(counts)
}

/// Expected validity at 1, 3 and 5 of uniformly random rankings.
///
/// Each item draws from its own ChaCha8 stream (`seed`, stream = item index),
/// so the estimate does not depend on scheduling.
pub fn random_baseline(items: &[(usize, Vec<usize>)], trials: usize, seed: u64) -> Result<[f64; 3]> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if items.is_empty() {
        return Ok([0.0; 3]);
    }
    let per_item: Vec<[usize; 3]> = items
        .par_iter()
        .enumerate()
        .map(|(i, (d, relevant))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let depth = CUTOFFS[2].min(*d);
            let mut hits = [0usize; 3];
            for _ in 0..trials {
                // The first entries of a uniform permutation are a uniformly
                // ordered sample without replacement.
                let top = index::sample(&mut rng, *d, depth).into_vec();
                for (slot, &k) in hits.iter_mut().zip(&CUTOFFS) {
                    if top[..k.min(depth)].iter().any(|s| relevant.contains(s)) {
                        *slot += 1;
                    }
                }
            }
            hits
        })
        .collect();
    let denom = (items.len() * trials) as f64;
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = per_item.iter().map(|h| h[c]).sum::<usize>() as f64 / denom;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub group: String,
    pub strategy: Strategy,
    pub n: usize,
    pub n_1: usize,
    pub n_3: usize,
    pub n_5: usize,
    pub validity_1: f64,
    pub validity_3: f64,
    pub validity_5: f64,
    pub baseline_1: f64,
    pub baseline_3: f64,
    pub baseline_5: f64,
    pub degenerate: usize,
}

pub fn validity_report(
    group: &str,
    strategy: Strategy,
    items: &[Judged],
    trials: usize,
    seed: u64,
) -> Result<ValidityReport> {
    let counts = validity(items)?;
    let [v1, v3, v5] = counts.validity();
    let baseline_items: Vec<(usize, Vec<usize>)> = items
        .iter()
        .map(|j| (j.explanation.segments.len(), j.relevant()))
        .collect();
    let [b1, b3, b5] = random_baseline(&baseline_items, trials, seed)?;
    Ok(ValidityReport {
        group: group.to_string(),
        strategy,
        n: counts.n,
        n_1: counts.n_1,
        n_3: counts.n_3,
        n_5: counts.n_5,
        validity_1: v1,
        validity_3: v3,
        validity_5: v5,
        baseline_1: b1,
        baseline_3: b3,
        baseline_5: b5,
        degenerate: items
            .iter()
            .filter(|j| j.explanation.confidence_flag == crate::explainer::ConfidenceFlag::Degenerate)
            .count(),
    })
}

/// The `All` report plus one per gender and per dialect present in the metadata.
pub fn grouped_reports(
    strategy: Strategy,
    items: &[Judged],
    trials: usize,
    seed: u64,
) -> Result<Vec<ValidityReport>> {
    let mut out = vec![validity_report("All", strategy, items, trials, seed)?];
    let mut groups: BTreeMap<String, Vec<Judged>> = BTreeMap::new();
    for item in items {
        if let Some(g) = &item.speaker.gender {
            groups.entry(format!("gender={g}")).or_default().push(item.clone());
        }
        if let Some(d) = &item.speaker.dialect {
            groups.entry(format!("dialect={d}")).or_default().push(item.clone());
        }
    }
    for (name, members) in groups {
        out.push(validity_report(&name, strategy, &members, trials, seed)?);
    }
    Ok(out)
}

/// Plain-text table: one block per group, metric rows, strategy columns.
pub fn render_table(reports: &[ValidityReport]) -> String {
    let mut groups: Vec<&str> = Vec::new();
    for r in reports {
        if !groups.contains(&r.group.as_str()) {
            groups.push(&r.group);
        }
    }
    let mut out = String::new();
    for g in groups {
        let cols: Vec<&ValidityReport> = reports.iter().filter(|r| r.group == g).collect();
        let _ = writeln!(out, "{g}");
        let _ = write!(out, "{:<12}", "metric");
        for c in &cols {
            let _ = write!(out, " {:>17}", format!("{} / random", c.strategy));
        }
        out.push('\n');
        for (row, k) in CUTOFFS.iter().enumerate() {
            let _ = write!(out, "{:<12}", format!("validity_{k}"));
            for c in &cols {
                let (v, b) = match row {
                    0 => (c.validity_1, c.baseline_1),
                    1 => (c.validity_3, c.baseline_3),
                    _ => (c.validity_5, c.baseline_5),
                };
                let _ = write!(out, " {:>17}", format!("{v:.2} / {b:.2}"));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "N");
        for c in &cols {
            let _ = write!(out, " {:>17}", c.n);
        }
        out.push_str("\n\n");
    }
    out
}

pub fn render_csv(reports: &[ValidityReport]) -> String {
    let mut out = String::from(
        "group,strategy,n,validity_1,validity_3,validity_5,baseline_1,baseline_3,baseline_5\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.group,
            r.strategy,
            r.n,
            r.validity_1,
            r.validity_3,
            r.validity_5,
            r.baseline_1,
            r.baseline_3,
            r.baseline_5
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs with a nonzero difference.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
    pub significant_at_5pct: bool,
}

/// Largest sample size for which the p-value is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. Exact for up to [`WILCOXON_EXACT_MAX_N`]
/// nonzero pairs (tie-aware enumeration over doubled ranks); beyond that a
/// normal approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest("all paired differences are zero"));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX_N {
        // Average ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0u64; max_sum + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let cutoff = (statistic * 2.0).round() as usize;
        let tail: u64 = counts[..=cutoff].iter().sum();
        let p = 2.0 * tail as f64 / 2f64.powi(n as i32);
        (p.min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (statistic - mean + 0.5) / var.sqrt();
        let p = 2.0 * Normal::standard().cdf(z);
        (p.min(1.0), false)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        w_minus,
        n,
        p_value,
        exact,
        significant_at_5pct: p_value < 0.05,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSegment {
    pub segment: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub count: usize,
    pub frequency: f64,
}

/// The `top_m` segments most often ranked within the top `top_m` positions.
pub fn top_segment_report(expls: &[&Explanation], top_m: usize) -> Result<Vec<TopSegment>> {
    if expls.is_empty() {
        return Err(Error::Empty("no explanations for top-segment report"));
    }
    if top_m == 0 {
        return Err(Error::InvalidArgument("top_m must be >= 1".into()));
    }
    let mut counts: BTreeMap<usize, (usize, Option<String>)> = BTreeMap::new();
    for e in expls {
        for &s in e.top(top_m) {
            let entry = counts
                .entry(s)
                .or_insert_with(|| (0, e.segments.get(s).and_then(|x| x.label.clone())));
            entry.0 += 1;
        }
    }
    let mut rows: Vec<TopSegment> = counts
        .into_iter()
        .map(|(segment, (count, label))| TopSegment {
            segment,
            label,
            count,
            frequency: count as f64 / expls.len() as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.segment.cmp(&b.segment)));
    rows.truncate(top_m);
    Ok(rows)
}

/// Hypothesis positions whose explanations describe an occurrence of `key`.
///
/// Substitutions and insertions map to the erroneous output phoneme. A deleted
/// phoneme has no output, so the next surviving phoneme (or the last one when
/// the deletion is final) stands in for it.
pub fn mistake_positions(alignment: &AlignmentResult, key: &MistakeKey, hyp_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut next_hyp = 0;
    for op in &alignment.ops {
        if key.matches(op) {
            let pos = match op.kind {
                OpKind::Deletion if hyp_len == 0 => None,
                OpKind::Deletion => Some(next_hyp.min(hyp_len - 1)),
                _ => op.hyp_index,
            };
            if let Some(p) = pos {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        if let Some(h) = op.hyp_index {
            next_hyp = h + 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainer::{ConfidenceFlag, ExplainOptions};
    use crate::perturbation::PerturbationPlan;

    fn expl(kind: SegmentKind, segments: Vec<Segment>, ranking: Vec<usize>) -> Explanation {
        Explanation {
            audio_id: "a".into(),
            position: 0,
            phoneme: "aa".into(),
            strategy: Strategy::Lime,
            plan: PerturbationPlan::default(),
            surrogate: ExplainOptions::default(),
            intercept: 0.0,
            scores: vec![0.0; segments.len()],
            ranking,
            segment_kind: kind,
            segments,
            confidence_flag: ConfidenceFlag::Ok,
        }
    }

    fn span(index: usize, start: usize, end: usize) -> Segment {
        Segment { index, start, end, label: None }
    }

    fn expert(d: usize) -> Vec<Segment> {
        (0..d).map(|i| span(i, i * 10, i * 10 + 10)).collect()
    }

    #[test]
    fn expert_hits() {
        let e = expl(SegmentKind::Expert, expert(10), vec![5, 2, 9, 0, 1, 3, 4, 6, 7, 8]);
        assert!(hit_at_k(&e, &span(5, 50, 60), 1).unwrap());
        assert!(!hit_at_k(&e, &span(9, 90, 100), 1).unwrap());
        assert!(hit_at_k(&e, &span(9, 90, 100), 3).unwrap());
        assert!(!hit_at_k(&e, &span(8, 80, 90), 5).unwrap());
        assert!(hit_at_k(&e, &span(8, 80, 90), 50).unwrap());
        assert!(hit_at_k(&e, &span(8, 80, 90), 0).is_err());
    }

    #[test]
    fn time_overlap_hits() {
        let segs = vec![span(0, 0, 1120), span(1, 1120, 2240)];
        let e = expl(SegmentKind::Time, segs.clone(), vec![0, 1]);
        assert!(hit_at_k(&e, &span(3, 1000, 2000), 1).unwrap());
        // Touching is not overlapping.
        let e = expl(SegmentKind::Time, segs, vec![1, 0]);
        assert!(!hit_at_k(&e, &span(3, 0, 1120), 1).unwrap());
    }

    #[test]
    fn validity_counts_hits() {
        let gt = span(0, 0, 10);
        let items: Vec<Judged> = [vec![0, 1, 2], vec![1, 0, 2], vec![0, 2, 1], vec![2, 1, 0]]
            .into_iter()
            .map(|r| Judged {
                explanation: expl(SegmentKind::Expert, expert(3), r),
                ground_truth: gt.clone(),
                speaker: SpeakerInfo::default(),
            })
            .collect();
        let c = validity(&items).unwrap();
        assert_eq!(c.validity()[0], 0.5);
        assert_eq!(c.n_3, 4);
        assert!(validity(&[]).is_err());
    }

    #[test]
    fn single_segment_baseline_is_one() {
        assert_eq!(random_baseline(&[(1, vec![0])], 50, 3).unwrap(), [1.0; 3]);
        assert!(random_baseline(&[(1, vec![0])], 0, 3).is_err());
    }

    #[test]
    fn wilcoxon_all_positive() {
        let r = wilcoxon_signed_rank(&[(2.0, 1.0), (4.0, 2.0), (3.0, 0.0)]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.25).abs() < 1e-15);
        assert!(r.exact);
        assert!(!r.significant_at_5pct);
    }

    #[test]
    fn wilcoxon_symmetry_and_zero() {
        let pairs = [(1.0, 3.0), (5.0, 2.0), (0.4, 0.1), (7.0, 9.5), (3.0, 3.0)];
        let swapped: Vec<_> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let a = wilcoxon_signed_rank(&pairs).unwrap();
        let b = wilcoxon_signed_rank(&swapped).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.n, 4);
        assert!(matches!(
            wilcoxon_signed_rank(&[(1.0, 1.0)]),
            Err(Error::UndefinedTest(_))
        ));
    }

    #[test]
    fn wilcoxon_normal_branch() {
        let pairs: Vec<(f64, f64)> = (1..=30).map(|i| (i as f64 * 1.5, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-5);
        assert!(r.significant_at_5pct);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn top_segments() {
        let a = expl(SegmentKind::Expert, expert(6), vec![4, 1, 2, 0, 3, 5]);
        let b = expl(SegmentKind::Expert, expert(6), vec![4, 2, 0, 1, 3, 5]);
        let rows = top_segment_report(&[&a, &b], 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].segment, rows[0].frequency), (4, 1.0));
        let rows = top_segment_report(&[&a, &b], 3).unwrap();
        assert_eq!(rows.iter().map(|r| r.segment).collect::<Vec<_>>(), vec![2, 4, 0]);
        assert!(top_segment_report(&[], 3).is_err());
    }

    #[test]
    fn ground_truth_only_for_matched_phonemes() {
        let seg = Segmentation::from_labeled([
            (0, 10, "d".to_string()),
            (10, 20, "aa".to_string()),
            (20, 30, "r".to_string()),
        ])
        .unwrap();
        let t = Transcription::parse("d aa w");
        let gt = ground_truth_map(&t, &seg, CostTable::default());
        assert_eq!(gt[0].as_ref().unwrap().index, 0);
        assert_eq!(gt[1].as_ref().unwrap().index, 1);
        assert!(gt[2].is_none());
    }

    #[test]
    fn deletion_maps_to_next_output() {
        let reference = ["d", "aa", "r", "k"];
        let hyp = ["d", "aa", "k"];
        let al = align(&reference, &hyp, CostTable::default());
        let key = al.mistakes().next().unwrap();
        assert_eq!(mistake_positions(&al, &key, 3), vec![2]);
        let hyp = ["d", "aa", "r"];
        let reference = ["d", "aa", "r", "k"];
        let al = align(&reference, &hyp, CostTable::default());
        let key = al.mistakes().next().unwrap();
        assert_eq!(mistake_positions(&al, &key, 3), vec![2]);
    }
}
