//! Local linear surrogates over segment masks.
//!
//! For every output phoneme `p` of the original transcription, each mutant is
//! labelled 1 if `p` survives (aligned and identical) in the mutant's
//! transcription, else 0. A weighted ridge regression of those labels on the
//! mask bits gives one importance score per segment; the segments ranked by
//! descending score form the explanation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{presence_labels, CostTable};
use crate::audio::{time_segmentation, AudioClip, Segment, SegmentKind, Segmentation};
use crate::error::{Error, Result};
use crate::perturbation::{constant_columns, realize, sample, MaskVector, PerturbationPlan, Strategy};
use crate::recognizer::{Recognizer, Transcription};

/// Anything that turns audio into phonemes.
pub trait Transcribe: Sync {
    fn transcribe(&self, clip: &AudioClip) -> Result<Transcription>;
}

impl Transcribe for Recognizer {
    fn transcribe(&self, clip: &AudioClip) -> Result<Transcription> {
        Recognizer::transcribe(self, clip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    /// Raw score, descending.
    #[default]
    Signed,
    /// Absolute score, descending.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    pub lambda: f64,
    pub rank_by: RankBy,
    pub costs: CostTable,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            rank_by: RankBy::Signed,
            costs: CostTable::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceFlag {
    Ok,
    /// Every mutant received the same label; the ranking carries no signal.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub audio_id: String,
    pub position: usize,
    pub phoneme: String,
    pub strategy: Strategy,
    pub plan: PerturbationPlan,
    pub surrogate: ExplainOptions,
    pub intercept: f64,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub segment_kind: SegmentKind,
    pub segments: Vec<Segment>,
    pub confidence_flag: ConfidenceFlag,
}

impl Explanation {
    pub fn top(&self, k: usize) -> &[usize] {
        &self.ranking[..k.min(self.ranking.len())]
    }
}

/// Cosine similarity between the all-ones instance and `mask`: `sqrt(kept / d)`.
pub fn closeness_weight(mask: &MaskVector) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Empty("mask vector"));
    }
    Ok((mask.kept() as f64 / mask.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub scores: Vec<f64>,
}

/// Minimizes `sum_i w_i (y_i - b - x_i . s)^2 + lambda |s|^2` with an
/// unpenalized intercept `b`.
///
/// The intercept is eliminated by weighted centering and the remaining
/// `d x d` normal equations are solved by Cholesky when `lambda > 0`, or by a
/// symmetric eigendecomposition pseudo-inverse otherwise, which yields the
/// minimum-norm score vector for rank-deficient designs.
pub fn fit_weighted_ridge(
    masks: &[MaskVector],
    weights: &[f64],
    labels: &[f64],
    lambda: f64,
) -> Result<RidgeFit> {
    let n = masks.len();
    if n == 0 {
        return Err(Error::Regression("no records".into()));
    }
    if n < 2 {
        return Err(Error::Regression("at least two records are required".into()));
    }
    if weights.len() != n || labels.len() != n {
        return Err(Error::Regression(format!(
            "{n} masks but {} weights and {} labels",
            weights.len(),
            labels.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Regression(format!("lambda must be >= 0, got {lambda}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Regression("weights must be finite and non-negative".into()));
    }
    let d = masks[0].len();
    if masks.iter().any(|m| m.len() != d) {
        return Err(Error::Regression("masks differ in length".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Regression("all weights are zero".into()));
    }

    let x = DMatrix::from_fn(n, d, |i, j| masks[i].bits()[j] as f64);
    let w = DVector::from_column_slice(weights);
    let y = DVector::from_column_slice(labels);

    let x_mean = x.tr_mul(&w) / total;
    let y_mean = w.dot(&y) / total;

    // Rows scaled by sqrt(w) after centering.
    let mut xc = x;
    let mut yc = y;
    for i in 0..n {
        let sw = weights[i].sqrt();
        for j in 0..d {
            xc[(i, j)] = (xc[(i, j)] - x_mean[j]) * sw;
        }
        yc[i] = (yc[i] - y_mean) * sw;
    }
    let mut gram = xc.tr_mul(&xc);
    let rhs = xc.tr_mul(&yc);
    for j in 0..d {
        gram[(j, j)] += lambda;
    }

    let scores = match (lambda > 0.0).then(|| gram.clone().cholesky()).flatten() {
        Some(chol) => chol.solve(&rhs),
        None => pinv_solve(gram, &rhs),
    };
    let intercept = y_mean - x_mean.dot(&scores);
    Ok(RidgeFit {
        intercept,
        scores: scores.iter().copied().collect(),
    })
}

fn pinv_solve(sym: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = max * 1e-10;
    let proj = eig.eigenvectors.tr_mul(rhs);
    let scaled = DVector::from_fn(proj.len(), |i, _| {
        let ev = eig.eigenvalues[i];
        if ev.abs() > tol {
            proj[i] / ev
        } else {
            0.0
        }
    });
    &eig.eigenvectors * scaled
}

/// Segment indices sorted by descending score; equal scores keep ascending index order.
pub fn rank_scores(scores: &[f64], rank_by: RankBy) -> Vec<usize> {
    let key = |s: f64| match rank_by {
        RankBy::Signed => s,
        RankBy::Absolute => s.abs(),
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(scores[b]).total_cmp(&key(scores[a])).then(a.cmp(&b)));
    order
}

/// Mutants of one utterance together with their transcriptions.
///
/// Built once per (clip, plan) and shared by the explanations of every phoneme
/// position.
#[derive(Debug, Clone)]
pub struct MutantSet {
    pub audio_id: String,
    pub original: Transcription,
    pub segmentation: Segmentation,
    pub masks: Vec<MaskVector>,
    pub weights: Vec<f64>,
    pub transcriptions: Vec<Transcription>,
    /// `presence[i][p]`: whether original phoneme `p` survives in mutant `i`.
    presence: Vec<Vec<u8>>,
    plan: PerturbationPlan,
    options: ExplainOptions,
}

impl MutantSet {
    /// Transcribes the original and every mutant. Recognizer calls run in
    /// parallel on the current rayon pool; results keep mutant order.
    pub fn generate<R: Transcribe + ?Sized>(
        clip: &AudioClip,
        expert: Option<&Segmentation>,
        recognizer: &R,
        plan: &PerturbationPlan,
        options: ExplainOptions,
    ) -> Result<Self> {
        plan.validate()?;
        clip.ensure_explainable()?;
        let segmentation = match plan.strategy {
            Strategy::LimeTs => time_segmentation(clip, plan.ts_duration_ms)?,
            s => {
                let seg = expert.ok_or_else(|| {
                    Error::InvalidArgument(format!("strategy {s} requires expert segments"))
                })?;
                seg.check_fits(clip)?;
                seg.clone()
            }
        };
        let original = recognizer.transcribe(clip)?;
        let masks = sample(plan, segmentation.len())?;
        let flat = constant_columns(&masks);
        if !flat.is_empty() && segmentation.len() >= 2 {
            log::warn!(
                "{}: {} of {} mask columns never vary ({:?})",
                clip.id,
                flat.len(),
                segmentation.len(),
                flat
            );
        }
        let weights = masks.iter().map(closeness_weight).collect::<Result<Vec<_>>>()?;
        let transcriptions = masks
            .par_iter()
            .map(|mask| {
                realize(clip, &segmentation, mask)
                    .and_then(|audio| recognizer.transcribe(&audio))
                    .map_err(|e| Error::Mutant {
                        mask: mask.to_string(),
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let presence = transcriptions
            .iter()
            .map(|t| presence_labels(original.phonemes(), t.phonemes(), options.costs))
            .collect();
        Ok(Self {
            audio_id: clip.id.clone(),
            original,
            segmentation,
            masks,
            weights,
            transcriptions,
            presence,
            plan: plan.clone(),
            options,
        })
    }

    pub fn labels(&self, position: usize) -> Vec<u8> {
        self.presence.iter().map(|row| row[position]).collect()
    }

    pub fn explain(&self, position: usize) -> Result<Explanation> {
        let phoneme = self
            .original
            .get(position)
            .ok_or(Error::IndexOutOfRange {
                index: position,
                len: self.original.len(),
            })?
            .to_string();
        let labels: Vec<f64> = self.labels(position).into_iter().map(f64::from).collect();
        let d = self.segmentation.len();
        // Zero-weight mutants do not enter the fit, so only weighted labels
        // decide whether there is anything to explain.
        let mut weighted = labels.iter().zip(&self.weights).filter(|(_, &w)| w > 0.0).map(|(l, _)| *l);
        let degenerate = match weighted.next() {
            Some(first) => weighted.all(|l| l == first),
            None => true,
        };

        let fit = match fit_weighted_ridge(&self.masks, &self.weights, &labels, self.options.lambda) {
            Ok(fit) => fit,
            // A single-segment LIME run only produces zero-weight mutants.
            Err(Error::Regression(_)) if degenerate => RidgeFit {
                intercept: labels.iter().sum::<f64>() / labels.len().max(1) as f64,
                scores: vec![0.0; d],
            },
            Err(e) => return Err(e),
        };
        let ranking = if degenerate {
            (0..d).collect()
        } else {
            rank_scores(&fit.scores, self.options.rank_by)
        };
        Ok(Explanation {
            audio_id: self.audio_id.clone(),
            position,
            phoneme,
            strategy: self.plan.strategy,
            plan: self.plan.clone(),
            surrogate: self.options,
            intercept: fit.intercept,
            scores: fit.scores,
            ranking,
            segment_kind: self.segmentation.kind(),
            segments: self.segmentation.segments().to_vec(),
            confidence_flag: if degenerate {
                ConfidenceFlag::Degenerate
            } else {
                ConfidenceFlag::Ok
            },
        })
    }

    pub fn explain_all(&self) -> Result<Vec<Explanation>> {
        (0..self.original.len()).map(|p| self.explain(p)).collect()
    }
}

/// Explains the phoneme at `position` of the clip's transcription.
pub fn explain_phoneme<R: Transcribe + ?Sized>(
    clip: &AudioClip,
    expert: Option<&Segmentation>,
    recognizer: &R,
    plan: &PerturbationPlan,
    options: ExplainOptions,
    position: usize,
) -> Result<Explanation> {
    MutantSet::generate(clip, expert, recognizer, plan, options)?.explain(position)
}

/// Explains every phoneme of the clip's transcription from one shared mutant set.
pub fn explain_all<R: Transcribe + ?Sized>(
    clip: &AudioClip,
    expert: Option<&Segmentation>,
    recognizer: &R,
    plan: &PerturbationPlan,
    options: ExplainOptions,
) -> Result<Vec<Explanation>> {
    let set = MutantSet::generate(clip, expert, recognizer, plan, options)?;
    if set.original.is_empty() {
        return Err(Error::Empty("original transcription"));
    }
    set.explain_all()
}
