//! The recognizer boundary.
//!
//! A recognizer maps an [`AudioClip`] to a phoneme [`Transcription`] and is
//! treated as a black box. Two deterministic synthetic recognizers act as
//! ground-truth oracles: each slot of `slot_ms` audio is quantized by its mean
//! absolute amplitude into a phoneme index (`round(m / 1000) - 1`, clamped to
//! the vocabulary), and slots below `silence_threshold` emit nothing.
//! External recognizers are invoked as `<command...> <wav-path>` and must print
//! whitespace-separated phonemes on stdout.

use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::audio::{encode_wav, samples_per_span, AudioClip};
use crate::error::{Error, Result};

/// PCM units per quantization level of the synthetic recognizers.
pub const SYNTH_LEVEL_STEP: f64 = 1000.0;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcription(Vec<String>);

impl Transcription {
    /// Builds a transcription, rejecting empty tokens or tokens containing whitespace.
    pub fn new<S: Into<String>>(phonemes: impl IntoIterator<Item = S>) -> Result<Self> {
        let phonemes: Vec<String> = phonemes.into_iter().map(Into::into).collect();
        if let Some(bad) = phonemes
            .iter()
            .find(|p| p.is_empty() || p.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(format!("invalid phoneme token {bad:?}")));
        }
        Ok(Self(phonemes))
    }

    pub fn parse(text: &str) -> Self {
        Self(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn phonemes(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.0.get(i).map(String::as_str)
    }
}

impl std::fmt::Display for Transcription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognizerKind {
    Subprocess,
    SyntheticLocal,
    SyntheticContextual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizerSpec {
    pub kind: RecognizerKind,
    /// Executable followed by fixed arguments; the WAV path is appended.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_slot_ms")]
    pub slot_ms: f64,
    #[serde(default)]
    pub vocab: Vec<String>,
    #[serde(default = "default_silence_threshold")]
    pub silence_threshold: f64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    /// Concurrent subprocess cap; logical CPU count when absent.
    #[serde(default)]
    pub max_procs: Option<usize>,
}

fn default_slot_ms() -> f64 {
    70.0
}

fn default_silence_threshold() -> f64 {
    50.0
}

fn default_timeout_s() -> f64 {
    60.0
}

impl RecognizerSpec {
    pub fn synthetic(kind: RecognizerKind, vocab: Vec<String>, slot_ms: f64) -> Self {
        Self {
            kind,
            command: Vec::new(),
            slot_ms,
            vocab,
            silence_threshold: default_silence_threshold(),
            timeout_s: default_timeout_s(),
            max_procs: None,
        }
    }

    pub fn subprocess(command: Vec<String>) -> Self {
        Self {
            kind: RecognizerKind::Subprocess,
            command,
            slot_ms: default_slot_ms(),
            vocab: Vec::new(),
            silence_threshold: default_silence_threshold(),
            timeout_s: default_timeout_s(),
            max_procs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RecognizerKind::Subprocess if self.command.is_empty() => Err(Error::InvalidArgument(
                "subprocess recognizer requires a command".into(),
            )),
            RecognizerKind::SyntheticLocal | RecognizerKind::SyntheticContextual
                if self.vocab.is_empty() =>
            {
                Err(Error::InvalidArgument(
                    "synthetic recognizer requires a non-empty vocab".into(),
                ))
            }
            _ if self.timeout_s.is_nan() || self.timeout_s <= 0.0 => Err(Error::InvalidArgument(
                "timeout_s must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Counting semaphore bounding concurrent recognizer processes.
#[derive(Debug)]
struct ProcessLimiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a ProcessLimiter);

impl ProcessLimiter {
    fn new(cap: usize) -> Self {
        Self {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A validated recognizer, cheap to clone and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Recognizer {
    spec: RecognizerSpec,
    limiter: Arc<ProcessLimiter>,
}

impl Recognizer {
    pub fn new(spec: RecognizerSpec) -> Result<Self> {
        spec.validate()?;
        let cap = spec
            .max_procs
            .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()));
        Ok(Self {
            spec,
            limiter: Arc::new(ProcessLimiter::new(cap)),
        })
    }

    pub fn spec(&self) -> &RecognizerSpec {
        &self.spec
    }

    pub fn transcribe(&self, clip: &AudioClip) -> Result<Transcription> {
        match self.spec.kind {
            RecognizerKind::SyntheticLocal => synthetic_local_decode(&self.spec, clip),
            RecognizerKind::SyntheticContextual => synthetic_contextual_decode(&self.spec, clip),
            RecognizerKind::Subprocess => {
                let _permit = self.limiter.acquire();
                subprocess_transcribe(&self.spec, clip)
            }
        }
    }
}

/// One-shot convenience over [`Recognizer::transcribe`].
pub fn transcribe(spec: &RecognizerSpec, clip: &AudioClip) -> Result<Transcription> {
    Recognizer::new(spec.clone())?.transcribe(clip)
}

/// Quantized level of each slot, `None` for slots below the silence threshold.
pub fn slot_levels(spec: &RecognizerSpec, clip: &AudioClip) -> Result<Vec<Option<usize>>> {
    if spec.vocab.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic recognizer requires a non-empty vocab".into(),
        ));
    }
    let slot_len = samples_per_span(clip.sample_rate, spec.slot_ms)?;
    let top = spec.vocab.len() - 1;
    Ok(clip
        .samples
        .chunks(slot_len)
        .map(|slot| {
            let mean = slot.iter().map(|&s| (s as f64).abs()).sum::<f64>() / slot.len() as f64;
            if mean < spec.silence_threshold {
                None
            } else {
                let level = (mean / SYNTH_LEVEL_STEP).round() - 1.0;
                Some((level.max(0.0) as usize).min(top))
            }
        })
        .collect())
}

/// Each non-silent slot emits `vocab[level]`, independently of every other slot.
pub fn synthetic_local_decode(spec: &RecognizerSpec, clip: &AudioClip) -> Result<Transcription> {
    Ok(Transcription(
        slot_levels(spec, clip)?
            .into_iter()
            .flatten()
            .map(|id| spec.vocab[id].clone())
            .collect(),
    ))
}

/// Slot `i` emits `vocab[(level_i + level_{i-1}) mod |vocab|]`; a silent
/// predecessor (or none) contributes level 0.
pub fn synthetic_contextual_decode(spec: &RecognizerSpec, clip: &AudioClip) -> Result<Transcription> {
    let v = spec.vocab.len();
    let mut prev = 0;
    let mut out = Vec::new();
    for level in slot_levels(spec, clip)? {
        match level {
            Some(id) => {
                out.push(spec.vocab[(id + prev) % v].clone());
                prev = id;
            }
            None => prev = 0,
        }
    }
    Ok(Transcription(out))
}

/// Runs an external recognizer on a temporary WAV copy of `clip`.
pub fn subprocess_transcribe(spec: &RecognizerSpec, clip: &AudioClip) -> Result<Transcription> {
    let (program, fixed_args) = spec.command.split_first().ok_or_else(|| {
        Error::InvalidArgument("subprocess recognizer requires a command".into())
    })?;
    let command_line = spec.command.join(" ");

    // Removed on drop, on every return path.
    let tmp = tempfile::Builder::new()
        .prefix("phonelime-")
        .suffix(".wav")
        .tempfile()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    std::fs::write(tmp.path(), encode_wav(clip)).map_err(|e| Error::io(tmp.path(), e))?;

    let mut child = Command::new(program)
        .args(fixed_args)
        .arg(tmp.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| Error::Launch {
            command: command_line.clone(),
            source,
        })?;

    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let status = match child
        .wait_timeout(Duration::from_secs_f64(spec.timeout_s))
        .map_err(|source| Error::Launch {
            command: command_line.clone(),
            source,
        })? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Timeout {
                seconds: spec.timeout_s,
            });
        }
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        return Err(Error::Recognizer {
            code: status.code(),
            stderr: String::from_utf8_lossy(&stderr).trim().to_string(),
        });
    }
    Ok(Transcription::parse(&String::from_utf8_lossy(&stdout)))
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        buf
    })
}
