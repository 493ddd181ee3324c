//! Weighted edit-distance alignment of phoneme sequences.
//!
//! Alignment follows the sclite convention: minimum total cost under a
//! substitution/deletion/insertion cost table, with deterministic
//! tie-breaking (match, then substitution, then deletion, then insertion)
//! during the traceback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostTable {
    pub sub: u32,
    pub del: u32,
    pub ins: u32,
}

impl CostTable {
    pub const SCLITE: CostTable = CostTable { sub: 4, del: 3, ins: 3 };
    pub const UNIT: CostTable = CostTable { sub: 1, del: 1, ins: 1 };
}

impl Default for CostTable {
    fn default() -> Self {
        Self::SCLITE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub ref_index: Option<usize>,
    pub hyp_index: Option<usize>,
    pub ref_label: Option<String>,
    pub hyp_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub ops: Vec<AlignmentOp>,
    pub cost: u32,
}

impl AlignmentResult {
    /// For every reference position, whether it is matched verbatim.
    pub fn ref_matched(&self, ref_len: usize) -> Vec<bool> {
        let mut out = vec![false; ref_len];
        for op in &self.ops {
            if let (OpKind::Match, Some(r)) = (op.kind, op.ref_index) {
                out[r] = true;
            }
        }
        out
    }

    /// Reference index matched by each hypothesis position, if any.
    pub fn hyp_to_ref(&self, hyp_len: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; hyp_len];
        for op in &self.ops {
            if let (OpKind::Match, Some(r), Some(h)) = (op.kind, op.ref_index, op.hyp_index) {
                out[h] = Some(r);
            }
        }
        out
    }

    pub fn mistakes(&self) -> impl Iterator<Item = MistakeKey> + '_ {
        self.ops.iter().filter_map(MistakeKey::from_op)
    }
}

pub fn align<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
    costs: CostTable,
) -> AlignmentResult {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for j in 1..=m {
        dp[j] = dp[j - 1] + costs.ins;
    }
    for i in 1..=n {
        dp[i * w] = dp[(i - 1) * w] + costs.del;
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = dp[(i - 1) * w + j - 1] + if same { 0 } else { costs.sub };
            let up = dp[(i - 1) * w + j] + costs.del;
            let left = dp[i * w + j - 1] + costs.ins;
            dp[i * w + j] = diag.min(up).min(left);
        }
    }

    let label = |s: &dyn AsRef<str>| Some(s.as_ref().to_string());
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = dp[(i - 1) * w + j - 1];
            let kind = if same && here == diag {
                Some(OpKind::Match)
            } else if !same && here == diag + costs.sub {
                Some(OpKind::Substitution)
            } else {
                None
            };
            if let Some(kind) = kind {
                ops.push(AlignmentOp {
                    kind,
                    ref_index: Some(i - 1),
                    hyp_index: Some(j - 1),
                    ref_label: label(&reference[i - 1]),
                    hyp_label: label(&hypothesis[j - 1]),
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + costs.del {
            ops.push(AlignmentOp {
                kind: OpKind::Deletion,
                ref_index: Some(i - 1),
                hyp_index: None,
                ref_label: label(&reference[i - 1]),
                hyp_label: None,
            });
            i -= 1;
        } else {
            ops.push(AlignmentOp {
                kind: OpKind::Insertion,
                ref_index: None,
                hyp_index: Some(j - 1),
                ref_label: None,
                hyp_label: label(&hypothesis[j - 1]),
            });
            j -= 1;
        }
    }
    ops.reverse();
    AlignmentResult {
        ops,
        cost: dp[n * w + m],
    }
}

/// 1 for every hypothesis phoneme matched against the reference, else 0.
pub fn label_against_reference<R: AsRef<str>, H: AsRef<str>>(
    reference: &[R],
    hypothesis: &[H],
) -> Vec<u8> {
    align(reference, hypothesis, CostTable::default())
        .hyp_to_ref(hypothesis.len())
        .into_iter()
        .map(|r| r.is_some() as u8)
        .collect()
}

/// Presence label of every original phoneme in a mutant transcription.
pub fn presence_labels<R: AsRef<str>, H: AsRef<str>>(
    original: &[R],
    mutant: &[H],
    costs: CostTable,
) -> Vec<u8> {
    align(original, mutant, costs)
        .ref_matched(original.len())
        .into_iter()
        .map(u8::from)
        .collect()
}

/// 1 iff the original phoneme at `p` survives, matched, in the mutant transcription.
pub fn phoneme_presence<R: AsRef<str>, H: AsRef<str>>(
    original: &[R],
    mutant: &[H],
    p: usize,
) -> Result<u8> {
    if p >= original.len() {
        return Err(Error::IndexOutOfRange {
            index: p,
            len: original.len(),
        });
    }
    Ok(presence_labels(original, mutant, CostTable::default())[p])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeKind {
    Substitution,
    Deletion,
    Insertion,
}

impl MistakeKind {
    fn code(self) -> char {
        match self {
            MistakeKind::Substitution => 'S',
            MistakeKind::Deletion => 'D',
            MistakeKind::Insertion => 'I',
        }
    }
}

/// A transcription error type, e.g. `er` substituted by `uw`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MistakeKey {
    #[serde(rename = "ref")]
    pub ref_label: Option<String>,
    #[serde(rename = "hyp")]
    pub hyp_label: Option<String>,
    pub kind: MistakeKind,
}

impl MistakeKey {
    pub fn from_op(op: &AlignmentOp) -> Option<Self> {
        let kind = match op.kind {
            OpKind::Match => return None,
            OpKind::Substitution => MistakeKind::Substitution,
            OpKind::Deletion => MistakeKind::Deletion,
            OpKind::Insertion => MistakeKind::Insertion,
        };
        Some(Self {
            ref_label: op.ref_label.clone(),
            hyp_label: op.hyp_label.clone(),
            kind,
        })
    }

    pub fn matches(&self, op: &AlignmentOp) -> bool {
        Self::from_op(op).as_ref() == Some(self)
    }
}

impl std::fmt::Display for MistakeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.ref_label, &self.hyp_label) {
            (Some(r), Some(h)) => write!(f, "({r},{h},{})", self.kind.code()),
            (Some(x), None) | (None, Some(x)) => write!(f, "({x},{})", self.kind.code()),
            (None, None) => write!(f, "({})", self.kind.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeFrequency {
    #[serde(flatten)]
    pub key: MistakeKey,
    pub count: usize,
    pub frequency: f64,
}

/// Fraction of utterances whose alignment contains each mistake at least once,
/// sorted by descending frequency then key.
pub fn mistake_frequencies<R, H>(corpus: &[(R, H)], costs: CostTable) -> Result<Vec<MistakeFrequency>>
where
    R: AsRef<[String]>,
    H: AsRef<[String]>,
{
    if corpus.is_empty() {
        return Err(Error::Empty("mistake corpus"));
    }
    let mut counts: BTreeMap<MistakeKey, usize> = BTreeMap::new();
    for (reference, hypothesis) in corpus {
        let present: BTreeSet<MistakeKey> = align(reference.as_ref(), hypothesis.as_ref(), costs)
            .mistakes()
            .collect();
        for key in present {
            *counts.entry(key).or_default() += 1;
        }
    }
    let total = corpus.len() as f64;
    let mut out: Vec<MistakeFrequency> = counts
        .into_iter()
        .map(|(key, count)| MistakeFrequency {
            key,
            count,
            frequency: count as f64 / total,
        })
        .collect();
    // BTreeMap order already gives the key tie-break; the sort is stable.
    out.sort_by_key(|f| std::cmp::Reverse(f.count));
    Ok(out)
}

impl AsRef<[String]> for crate::recognizer::Transcription {
    fn as_ref(&self) -> &[String] {
        self.phonemes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sequences_all_match() {
        let r = align(&toks("sh iy"), &toks("sh iy"), CostTable::default());
        assert_eq!(r.cost, 0);
        assert!(r.ops.iter().all(|o| o.kind == OpKind::Match));
    }

    #[test]
    fn substitution_cheaper_than_del_ins() {
        let r = align(&toks("er"), &toks("uw"), CostTable::SCLITE);
        assert_eq!(r.cost, 4);
        assert_eq!(r.ops.len(), 1);
        assert_eq!(r.ops[0].kind, OpKind::Substitution);
    }

    #[test]
    fn deletion_of_r() {
        let r = align(&toks("d aa r k"), &toks("d aa k"), CostTable::SCLITE);
        assert_eq!(r.cost, 3);
        let kinds: Vec<_> = r.ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, [OpKind::Match, OpKind::Match, OpKind::Deletion, OpKind::Match]);
        assert_eq!(r.ops[2].ref_label.as_deref(), Some("r"));
    }

    #[test]
    fn labels_against_reference() {
        assert_eq!(label_against_reference(&toks("a b c"), &toks("a b c")), vec![1, 1, 1]);
        assert_eq!(label_against_reference(&toks("sh iy"), &toks("s iy")), vec![0, 1]);
        assert_eq!(label_against_reference(&toks(""), &toks("aa")), vec![0]);
    }

    #[test]
    fn presence() {
        let o = toks("d aa r k");
        assert_eq!(phoneme_presence(&o, &toks("d aa k"), 2).unwrap(), 0);
        assert_eq!(phoneme_presence(&o, &toks("d aa k"), 0).unwrap(), 1);
        for p in 0..4 {
            assert_eq!(phoneme_presence(&o, &o, p).unwrap(), 1);
            assert_eq!(phoneme_presence(&o, &toks(""), p).unwrap(), 0);
        }
        assert!(phoneme_presence(&o, &o, 4).is_err());
        // A substituted phoneme does not exist at its position.
        assert_eq!(phoneme_presence(&o, &toks("d aa w k"), 2).unwrap(), 0);
    }

    #[test]
    fn mistake_frequency_counts_utterances() {
        let mut corpus = Vec::new();
        for i in 0..10 {
            let hyp = if i < 4 { "er uw" } else { "er er" };
            corpus.push((toks("er er"), toks(hyp)));
        }
        let f = mistake_frequencies(&corpus, CostTable::SCLITE).unwrap();
        let sub = f
            .iter()
            .find(|m| m.key.kind == MistakeKind::Substitution)
            .expect("er->uw present");
        assert_eq!(sub.count, 4);
        assert!((sub.frequency - 0.4).abs() < 1e-12);

        let same = vec![(toks("a b"), toks("a b")); 3];
        assert!(mistake_frequencies(&same, CostTable::SCLITE).unwrap().is_empty());
        let empty: Vec<(Vec<String>, Vec<String>)> = vec![];
        assert!(mistake_frequencies(&empty, CostTable::SCLITE).is_err());
    }

    #[test]
    fn mistake_display() {
        let key = MistakeKey {
            ref_label: Some("er".into()),
            hyp_label: Some("uw".into()),
            kind: MistakeKind::Substitution,
        };
        assert_eq!(key.to_string(), "(er,uw,S)");
        let json = serde_json::to_string(&MistakeFrequency { key, count: 1, frequency: 0.5 }).unwrap();
        assert_eq!(json, r#"{"ref":"er","hyp":"uw","kind":"substitution","count":1,"frequency":0.5}"#);
    }
}
