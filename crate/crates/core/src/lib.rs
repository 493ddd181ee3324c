//! Black-box explanations for phoneme recognizers.
//!
//! The crate perturbs an utterance by zero-masking audio segments, asks a
//! recognizer to transcribe every mutant, and fits a weighted linear surrogate
//! per output phoneme. Three perturbation strategies are provided: global
//! random masking ([`Strategy::Lime`]), sliding-window masking over annotated
//! segments ([`Strategy::LimeWs`]) and sliding-window masking over fixed
//! duration time segments ([`Strategy::LimeTs`]).
//!
//! The [`evaluation`] module scores explanations against annotated ground
//! truth (validity at 1, 3 and 5) and provides the random-ranking baseline and
//! a Wilcoxon signed-rank test.

pub mod alignment;
pub mod audio;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod explainer;
pub mod perturbation;
pub mod recognizer;
pub mod synth;

pub use alignment::{align, label_against_reference, phoneme_presence, AlignmentOp, AlignmentResult, CostTable, MistakeKey};
pub use audio::{AudioClip, Segment, SegmentKind, Segmentation};
pub use error::{Error, Result};
pub use explainer::{ConfidenceFlag, Explanation, ExplainOptions, RankBy};
pub use perturbation::{MaskVector, PerturbationPlan, Strategy};
pub use recognizer::{Recognizer, RecognizerKind, RecognizerSpec, Transcription};
