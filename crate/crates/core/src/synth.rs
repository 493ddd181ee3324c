//! Synthetic oracle corpora.
//!
//! Each utterance is a run of constant-amplitude slots whose levels the
//! synthetic recognizers decode exactly, so the annotated segment of every
//! phoneme is known by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{samples_per_span, AudioClip, Segmentation, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::evaluation::SpeakerInfo;
use crate::recognizer::{RecognizerKind, RecognizerSpec, SYNTH_LEVEL_STEP};

/// Phone labels used as synthetic vocabularies, in order.
pub const PHONE_INVENTORY: [&str; 32] = [
    "aa", "iy", "sh", "er", "uw", "d", "k", "r", "s", "ih", "ae", "ah", "ao", "eh", "ey", "f",
    "g", "hh", "jh", "l", "m", "n", "ng", "ow", "p", "t", "th", "v", "w", "y", "z", "b",
];

/// Samples per half period of the square-wave carrier.
const CARRIER_HALF_PERIOD: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub slots_per_clip: usize,
    pub slot_ms: f64,
    pub vocab_size: usize,
    pub contextual: bool,
    pub seed: u64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 50,
            slots_per_clip: 8,
            slot_ms: 70.0,
            vocab_size: 5,
            contextual: false,
            seed: 1,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SynthConfig {
    pub fn vocab(&self) -> Vec<String> {
        PHONE_INVENTORY[..self.vocab_size]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn recognizer(&self) -> RecognizerSpec {
        let kind = if self.contextual {
            RecognizerKind::SyntheticContextual
        } else {
            RecognizerKind::SyntheticLocal
        };
        RecognizerSpec::synthetic(kind, self.vocab(), self.slot_ms)
    }

    fn validate(&self) -> Result<()> {
        if self.n_clips == 0 || self.slots_per_clip == 0 {
            return Err(Error::InvalidArgument("clip and slot counts must be >= 1".into()));
        }
        let min_vocab = if self.contextual { 3 } else { 2 };
        if self.vocab_size < min_vocab || self.vocab_size > PHONE_INVENTORY.len() {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must lie in {min_vocab}..={}",
                PHONE_INVENTORY.len()
            )));
        }
        samples_per_span(self.sample_rate, self.slot_ms)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub clip: AudioClip,
    pub phn: Segmentation,
    pub speaker: SpeakerInfo,
    /// Quantization level of every slot.
    pub levels: Vec<usize>,
}

/// Slot levels for one utterance.
///
/// Local corpora never repeat a level in adjacent slots. Contextual corpora
/// draw levels from `1..V` (level 0 would leave the successor unchanged when
/// masked) and keep adjacent decoded labels distinct.
fn draw_levels(rng: &mut ChaCha8Rng, slots: usize, vocab: usize, contextual: bool) -> Vec<usize> {
    let mut levels: Vec<usize> = Vec::with_capacity(slots);
    let mut prev_label: Option<usize> = None;
    for _ in 0..slots {
        let prev_level = levels.last().copied();
        loop {
            let level = if contextual {
                rng.random_range(1..vocab)
            } else {
                rng.random_range(0..vocab)
            };
            let label = if contextual {
                (level + prev_level.unwrap_or(0)) % vocab
            } else {
                level
            };
            if prev_label != Some(label) {
                levels.push(level);
                prev_label = Some(label);
                break;
            }
        }
    }
    levels
}

pub fn generate(config: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    config.validate()?;
    let vocab = config.vocab();
    let slot_len = samples_per_span(config.sample_rate, config.slot_ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_clips);
    for i in 0..config.n_clips {
        let levels = draw_levels(&mut rng, config.slots_per_clip, vocab.len(), config.contextual);
        let mut samples = Vec::with_capacity(levels.len() * slot_len);
        for &level in &levels {
            let amp = (SYNTH_LEVEL_STEP * (level + 1) as f64) as i16;
            for n in 0..slot_len {
                samples.push(if (n / CARRIER_HALF_PERIOD).is_multiple_of(2) { amp } else { -amp });
            }
        }
        let mut prev = 0;
        let spans = levels.iter().enumerate().map(|(s, &level)| {
            let label = if config.contextual {
                let l = vocab[(level + prev) % vocab.len()].clone();
                prev = level;
                l
            } else {
                vocab[level].clone()
            };
            (s * slot_len, (s + 1) * slot_len, label)
        });
        let phn = Segmentation::from_labeled(spans.collect::<Vec<_>>())?;
        let id = format!("synth_{i:03}");
        out.push(SynthUtterance {
            clip: AudioClip::new(id, config.sample_rate, samples)?,
            phn,
            speaker: SpeakerInfo {
                gender: Some(if i % 2 == 0 { "Female" } else { "Male" }.to_string()),
                dialect: Some(format!("dr{}", i % 8 + 1)),
                speaker_id: Some(format!("spk{i:03}")),
            },
            levels,
        });
    }
    Ok(out)
}
