//! Mutant generation.
//!
//! A mutant is a binary [`MaskVector`] over the `d` segments of a
//! segmentation: bit 1 keeps the segment, bit 0 zeroes it. All sampling runs on
//! a single ChaCha8 stream seeded from the plan, so identical plans always
//! produce identical masks.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mask_segments, time_segmentation, AudioClip, Segmentation, DEFAULT_TIME_SEGMENT_MS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Independent random masking of all annotated segments.
    Lime,
    /// Sliding-window masking over annotated segments.
    LimeWs,
    /// Sliding-window masking over fixed-duration time segments.
    LimeTs,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Lime, Strategy::LimeWs, Strategy::LimeTs];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Lime => "lime",
            Strategy::LimeWs => "lime-ws",
            Strategy::LimeTs => "lime-ts",
        }
    }

    /// Whether the strategy needs an annotated segmentation.
    pub fn needs_expert_segments(self) -> bool {
        !matches!(self, Strategy::LimeTs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lime" => Ok(Strategy::Lime),
            "lime-ws" => Ok(Strategy::LimeWs),
            "lime-ts" => Ok(Strategy::LimeTs),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationPlan {
    pub strategy: Strategy,
    pub n_global: usize,
    pub mask_prob: f64,
    pub window_k: usize,
    pub n_per_window: usize,
    pub ts_duration_ms: f64,
    pub seed: u64,
}

impl Default for PerturbationPlan {
    fn default() -> Self {
        Self {
            strategy: Strategy::LimeTs,
            n_global: 500,
            mask_prob: 0.5,
            window_k: 7,
            n_per_window: 20,
            ts_duration_ms: DEFAULT_TIME_SEGMENT_MS,
            seed: 0,
        }
    }
}

impl PerturbationPlan {
    pub fn with_strategy(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_k < 1 {
            return Err(Error::InvalidArgument("window_k must be >= 1".into()));
        }
        if self.n_per_window < 1 {
            return Err(Error::InvalidArgument("n_per_window must be >= 1".into()));
        }
        if self.n_global < 1 {
            return Err(Error::InvalidArgument("n_global must be >= 1".into()));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask_prob must lie in (0, 1), got {}",
                self.mask_prob
            )));
        }
        if !(self.ts_duration_ms.is_finite() && self.ts_duration_ms > 0.0) {
            return Err(Error::InvalidArgument("ts_duration_ms must be positive".into()));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Segment presence bits; 1 = kept, 0 = masked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskVector(Vec<u8>);

impl MaskVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask bits must be 0 or 1".into()));
        }
        Ok(Self(bits))
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![1; d])
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for MaskVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Empty("segmentation has no segments"));
    }
    Ok(())
}

/// Masks for the configured strategy over `d` segments.
pub fn sample(plan: &PerturbationPlan, d: usize) -> Result<Vec<MaskVector>> {
    match plan.strategy {
        Strategy::Lime => sample_lime(plan, d),
        Strategy::LimeWs | Strategy::LimeTs => sample_ws(plan, d),
    }
}

/// `n_global` masks, each bit independently 0 with probability `mask_prob`;
/// the all-ones mask is rejected and redrawn.
pub fn sample_lime(plan: &PerturbationPlan, d: usize) -> Result<Vec<MaskVector>> {
    plan.validate()?;
    check_dim(d)?;
    if plan.n_global < d {
        log::warn!("n_global={} is below the feature count d={d}", plan.n_global);
    }
    let mut rng = plan.rng();
    let mut out = Vec::with_capacity(plan.n_global);
    while out.len() < plan.n_global {
        let bits: Vec<u8> = (0..d).map(|_| u8::from(!rng.random_bool(plan.mask_prob))).collect();
        if bits.contains(&0) {
            out.push(MaskVector(bits));
        }
    }
    Ok(out)
}

/// Window start positions `0..=d-k` (a single window when `d <= k`).
pub fn window_count(d: usize, window_k: usize) -> usize {
    d.saturating_sub(window_k) + 1
}

/// Sliding-window masks: for every window `[s, min(s+k, d))`, `n_per_window`
/// masks each zeroing between 1 and span distinct in-window segments.
pub fn sample_ws(plan: &PerturbationPlan, d: usize) -> Result<Vec<MaskVector>> {
    plan.validate()?;
    check_dim(d)?;
    let mut rng = plan.rng();
    let windows = window_count(d, plan.window_k);
    let mut out = Vec::with_capacity(windows * plan.n_per_window);
    for start in 0..windows {
        let span = (start + plan.window_k).min(d) - start;
        for _ in 0..plan.n_per_window {
            let m = rng.random_range(1..=span);
            let mut bits = vec![1u8; d];
            for i in index::sample(&mut rng, span, m) {
                bits[start + i] = 0;
            }
            out.push(MaskVector(bits));
        }
    }
    Ok(out)
}

/// Time-segments `clip` at the plan's duration, then samples sliding-window masks.
pub fn sample_ts(plan: &PerturbationPlan, clip: &AudioClip) -> Result<(Segmentation, Vec<MaskVector>)> {
    plan.validate()?;
    let seg = time_segmentation(clip, plan.ts_duration_ms)?;
    let masks = sample_ws(plan, seg.len())?;
    Ok((seg, masks))
}

/// Renders a mask as audio.
pub fn realize(clip: &AudioClip, seg: &Segmentation, mask: &MaskVector) -> Result<AudioClip> {
    if mask.len() != seg.len() {
        return Err(Error::InvalidArgument(format!(
            "mask length {} does not match {} segments",
            mask.len(),
            seg.len()
        )));
    }
    mask_segments(clip, seg, &mask.masked_indices())
}

/// Feature columns that never vary across `masks`.
pub fn constant_columns(masks: &[MaskVector]) -> Vec<usize> {
    let Some(first) = masks.first() else {
        return Vec::new();
    };
    (0..first.len())
        .filter(|&j| masks.iter().all(|m| m.0[j] == first.0[j]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(strategy: Strategy) -> PerturbationPlan {
        PerturbationPlan {
            seed: 11,
            ..PerturbationPlan::with_strategy(strategy)
        }
    }

    #[test]
    fn lime_is_reproducible_and_never_all_ones() {
        let p = PerturbationPlan { n_global: 3, ..plan(Strategy::Lime) };
        let a = sample_lime(&p, 4).unwrap();
        assert_eq!(a, sample_lime(&p, 4).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|m| m.kept() < 4));
    }

    #[test]
    fn lime_single_segment_always_masked() {
        let p = PerturbationPlan { n_global: 10, ..plan(Strategy::Lime) };
        assert!(sample_lime(&p, 1).unwrap().iter().all(|m| m.bits() == [0]));
    }

    #[test]
    fn mask_prob_bounds_rejected() {
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            let p = PerturbationPlan { mask_prob: bad, ..plan(Strategy::Lime) };
            assert!(sample_lime(&p, 4).is_err());
        }
        assert!(sample_lime(&plan(Strategy::Lime), 0).is_err());
        assert!(sample_ws(&plan(Strategy::LimeWs), 0).is_err());
    }

    #[test]
    fn ws_counts_and_window_confinement() {
        let p = PerturbationPlan { window_k: 4, n_per_window: 2, ..plan(Strategy::LimeWs) };
        let masks = sample_ws(&p, 10).unwrap();
        assert_eq!(window_count(10, 4), 7);
        assert_eq!(masks.len(), 14);
        for (i, m) in masks.iter().enumerate() {
            let start = i / 2;
            for (j, &b) in m.bits().iter().enumerate() {
                if j < start || j >= start + 4 {
                    assert_eq!(b, 1, "mask {m} bit {j} outside window {start}");
                }
            }
            let masked = m.len() - m.kept();
            assert!((1..=4).contains(&masked));
        }
    }

    #[test]
    fn ws_window_clamps_to_short_inputs() {
        let p = PerturbationPlan { window_k: 7, n_per_window: 5, ..plan(Strategy::LimeWs) };
        assert_eq!(window_count(3, 7), 1);
        assert_eq!(sample_ws(&p, 3).unwrap().len(), 5);
    }

    #[test]
    fn ts_segments_then_windows() {
        let clip = AudioClip::new("c", 16_000, vec![1; 7840]).unwrap();
        let p = PerturbationPlan { n_per_window: 3, ..plan(Strategy::LimeTs) };
        let (seg, masks) = sample_ts(&p, &clip).unwrap();
        assert_eq!(seg.len(), 7);
        assert_eq!(masks, sample_ws(&p, 7).unwrap());
    }

    #[test]
    fn realize_identity_and_silence() {
        let clip = AudioClip::new("c", 16_000, vec![3; 8]).unwrap();
        let seg = Segmentation::from_labeled([(0, 4, "a".into()), (4, 8, "b".into())]).unwrap();
        assert_eq!(realize(&clip, &seg, &MaskVector::ones(2)).unwrap(), clip);
        let silent = realize(&clip, &seg, &MaskVector::new(vec![0, 0]).unwrap()).unwrap();
        assert!(silent.samples.iter().all(|&s| s == 0));
        assert!(realize(&clip, &seg, &MaskVector::ones(3)).is_err());
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("lime_ws".parse::<Strategy>().unwrap(), Strategy::LimeWs);
        assert!("shap".parse::<Strategy>().is_err());
    }
}
