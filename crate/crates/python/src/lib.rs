//! Python bindings for phonelime.
//!
//! Structured results (explanations, alignments, reports) cross the boundary
//! as plain dicts and lists decoded from their JSON form.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use phonelime::audio::{self, mask_segments, parse_phn, parse_phn_str, read_wav, time_segmentation, write_wav};
use phonelime::corpus::{evaluate_corpus, write_synth_corpus, CorpusManifest, EvaluateConfig};
use phonelime::evaluation::{self, DEFAULT_BASELINE_TRIALS};
use phonelime::explainer::{self as core_explainer};
use phonelime::synth::SynthConfig;
use phonelime::{
    CostTable, Error, ExplainOptions, MaskVector, PerturbationPlan, RankBy, RecognizerKind, RecognizerSpec,
    Strategy,
};

create_exception!(phonelime, PhonelimeError, PyException);
create_exception!(phonelime, RecognizerError, PhonelimeError);

fn to_py_err(err: Error) -> PyErr {
    if err.is_recognizer_failure() {
        RecognizerError::new_err(err.to_string())
    } else {
        PhonelimeError::new_err(err.to_string())
    }
}

fn to_py_value<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PhonelimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn cost_table(name: &str) -> PyResult<CostTable> {
    match name {
        "sclite" => Ok(CostTable::SCLITE),
        "unit" => Ok(CostTable::UNIT),
        _ => Err(PyValueError::new_err(format!("unknown cost table `{name}`, expected sclite or unit"))),
    }
}

fn strategy(name: &str) -> PyResult<Strategy> {
    name.parse().map_err(to_py_err)
}

/// Mono 16-bit PCM audio.
#[pyclass(name = "AudioClip", module = "phonelime")]
struct PyAudioClip {
    inner: audio::AudioClip,
}

#[pymethods]
impl PyAudioClip {
    #[new]
    #[pyo3(signature = (id, samples, sample_rate = audio::DEFAULT_SAMPLE_RATE))]
    fn new(id: String, samples: Vec<i16>, sample_rate: u32) -> PyResult<Self> {
        let inner = audio::AudioClip::new(id, sample_rate, samples).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: read_wav(path).map_err(to_py_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_wav(&self.inner, path).map_err(to_py_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate
    }

    #[getter]
    fn samples(&self) -> Vec<i16> {
        self.inner.samples.clone()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration_secs()
    }

    /// Copy of the clip with the given segments zeroed.
    fn mask(&self, segmentation: &PySegmentation, indices: Vec<usize>) -> PyResult<Self> {
        let inner = mask_segments(&self.inner, &segmentation.inner, &indices).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "AudioClip(id={:?}, samples={}, sample_rate={})",
            self.inner.id,
            self.inner.len(),
            self.inner.sample_rate
        )
    }
}

/// Ordered, non-overlapping sample ranges of a clip.
#[pyclass(name = "Segmentation", module = "phonelime")]
struct PySegmentation {
    inner: audio::Segmentation,
}

#[pymethods]
impl PySegmentation {
    /// Reads a TIMIT-style `.phn` file.
    #[staticmethod]
    fn read_phn(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: parse_phn(path).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn parse_phn(text: &str) -> PyResult<Self> {
        let inner = parse_phn_str(text, "<string>".as_ref()).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Fixed-duration segments covering the whole clip.
    #[staticmethod]
    fn time(clip: &PyAudioClip, duration_ms: f64) -> PyResult<Self> {
        Ok(Self { inner: time_segmentation(&clip.inner, duration_ms).map_err(to_py_err)? })
    }

    /// `(start, end, label)` per segment, `label` is `None` for time segments.
    fn spans(&self) -> Vec<(usize, usize, Option<String>)> {
        self.inner
            .segments()
            .iter()
            .map(|s| (s.start, s.end, s.label.clone()))
            .collect()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    fn to_phn(&self) -> String {
        self.inner.to_phn_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Recognizer", module = "phonelime")]
struct PyRecognizer {
    spec: RecognizerSpec,
    inner: phonelime::Recognizer,
}

impl PyRecognizer {
    fn from_spec(spec: RecognizerSpec) -> PyResult<Self> {
        let inner = phonelime::Recognizer::new(spec.clone()).map_err(to_py_err)?;
        Ok(Self { spec, inner })
    }
}

#[pymethods]
impl PyRecognizer {
    /// Deterministic recognizer reading one amplitude level per slot.
    #[staticmethod]
    #[pyo3(signature = (vocab, slot_ms = 70.0, contextual = false))]
    fn synthetic(vocab: Vec<String>, slot_ms: f64, contextual: bool) -> PyResult<Self> {
        let kind = if contextual {
            RecognizerKind::SyntheticContextual
        } else {
            RecognizerKind::SyntheticLocal
        };
        Self::from_spec(RecognizerSpec::synthetic(kind, vocab, slot_ms))
    }

    /// External program invoked as `command... <wav>`, printing phonemes on stdout.
    #[staticmethod]
    #[pyo3(signature = (command, timeout_s = 60.0, max_procs = None))]
    fn subprocess(command: Vec<String>, timeout_s: f64, max_procs: Option<usize>) -> PyResult<Self> {
        let mut spec = RecognizerSpec::subprocess(command);
        spec.timeout_s = timeout_s;
        spec.max_procs = max_procs;
        Self::from_spec(spec)
    }

    fn transcribe(&self, py: Python<'_>, clip: &PyAudioClip) -> PyResult<Vec<String>> {
        let t = py
            .detach(|| self.inner.transcribe(&clip.inner))
            .map_err(to_py_err)?;
        Ok(t.phonemes().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Recognizer({})", serde_json::to_string(&self.spec).unwrap_or_default())
    }
}

/// Explains every phoneme the recognizer outputs for `clip`.
///
/// Returns one dict per output phoneme with `scores`, `ranking`, `segments`
/// and the `confidence_flag`.
#[pyfunction]
#[pyo3(signature = (
    clip, recognizer, expert = None, strategy = "lime-ts", seed = 0, window_k = 7,
    n_per_window = 20, n_global = 500, mask_prob = 0.5, ts_ms = 70.0, lambda_ = 1.0,
    rank_by_abs = false, costs = "sclite",
))]
#[allow(clippy::too_many_arguments)]
fn explain<'py>(
    py: Python<'py>,
    clip: &PyAudioClip,
    recognizer: &PyRecognizer,
    expert: Option<&PySegmentation>,
    strategy: &str,
    seed: u64,
    window_k: usize,
    n_per_window: usize,
    n_global: usize,
    mask_prob: f64,
    ts_ms: f64,
    lambda_: f64,
    rank_by_abs: bool,
    costs: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let plan = PerturbationPlan {
        strategy: self::strategy(strategy)?,
        n_global,
        mask_prob,
        window_k,
        n_per_window,
        ts_duration_ms: ts_ms,
        seed,
    };
    let options = ExplainOptions {
        lambda: lambda_,
        rank_by: if rank_by_abs { RankBy::Absolute } else { RankBy::Signed },
        costs: cost_table(costs)?,
    };
    let expert = expert.map(|s| &s.inner);
    let expls = py
        .detach(|| core_explainer::explain_all(&clip.inner, expert, &recognizer.inner, &plan, options))
        .map_err(to_py_err)?;
    to_py_value(py, &expls)
}

/// Minimum-cost alignment of a hypothesis against a reference.
#[pyfunction]
#[pyo3(signature = (reference, hypothesis, costs = "sclite"))]
fn align<'py>(
    py: Python<'py>,
    reference: Vec<String>,
    hypothesis: Vec<String>,
    costs: &str,
) -> PyResult<Bound<'py, PyAny>> {
    to_py_value(py, &phonelime::align(&reference, &hypothesis, cost_table(costs)?))
}

/// Weighted ridge regression of `labels` on binary `masks`; returns `(intercept, scores)`.
#[pyfunction]
#[pyo3(signature = (masks, weights, labels, lambda_ = 1.0))]
fn fit_weighted_ridge(
    masks: Vec<Vec<u8>>,
    weights: Vec<f64>,
    labels: Vec<f64>,
    lambda_: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let masks = masks
        .into_iter()
        .map(MaskVector::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py_err)?;
    let fit = core_explainer::fit_weighted_ridge(&masks, &weights, &labels, lambda_).map_err(to_py_err)?;
    Ok((fit.intercept, fit.scores))
}

/// Segment indices by descending score, lower index first among ties.
#[pyfunction]
#[pyo3(signature = (scores, absolute = false))]
fn rank_scores(scores: Vec<f64>, absolute: bool) -> Vec<usize> {
    let by = if absolute { RankBy::Absolute } else { RankBy::Signed };
    core_explainer::rank_scores(&scores, by)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
#[pyfunction]
fn wilcoxon<'py>(py: Python<'py>, first: Vec<f64>, second: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if first.len() != second.len() {
        return Err(PyValueError::new_err(format!(
            "paired samples differ in length: {} and {}",
            first.len(),
            second.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = first.into_iter().zip(second).collect();
    to_py_value(py, &evaluation::wilcoxon_signed_rank(&pairs).map_err(to_py_err)?)
}

/// Expected validity at 1, 3 and 5 of uniformly random rankings.
///
/// `items` holds `(segment_count, relevant_indices)` per explained phoneme.
#[pyfunction]
#[pyo3(signature = (items, trials = DEFAULT_BASELINE_TRIALS, seed = 0))]
fn random_baseline(items: Vec<(usize, Vec<usize>)>, trials: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let [v1, v3, v5] = evaluation::random_baseline(&items, trials, seed).map_err(to_py_err)?;
    Ok((v1, v3, v5))
}

/// Writes a synthetic corpus and returns the path of its manifest.
#[pyfunction]
#[pyo3(signature = (out_dir, n_clips = 50, slots = 8, slot_ms = 70.0, vocab_size = 5, contextual = false, seed = 1))]
fn synth_corpus(
    out_dir: PathBuf,
    n_clips: usize,
    slots: usize,
    slot_ms: f64,
    vocab_size: usize,
    contextual: bool,
    seed: u64,
) -> PyResult<PathBuf> {
    let config = SynthConfig {
        n_clips,
        slots_per_clip: slots,
        slot_ms,
        vocab_size,
        contextual,
        seed,
        ..SynthConfig::default()
    };
    write_synth_corpus(&config, &out_dir).map_err(to_py_err)?;
    Ok(out_dir.join("manifest.json"))
}

/// Runs the validity evaluation over a corpus manifest.
///
/// The manifest's recognizer and perturbation plan are used unless
/// overridden.
#[pyfunction]
#[pyo3(signature = (manifest, strategies = None, seed = 0, recognizer = None, lambda_ = 1.0, baseline_trials = DEFAULT_BASELINE_TRIALS))]
fn evaluate<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    strategies: Option<Vec<String>>,
    seed: u64,
    recognizer: Option<&PyRecognizer>,
    lambda_: f64,
    baseline_trials: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let manifest = CorpusManifest::load(manifest).map_err(to_py_err)?;
    let strategies = match strategies {
        Some(names) => names.iter().map(|n| strategy(n)).collect::<PyResult<_>>()?,
        None => Strategy::ALL.to_vec(),
    };
    let config = EvaluateConfig {
        strategies,
        plan: PerturbationPlan { seed, ..manifest.plan.clone() },
        surrogate: ExplainOptions { lambda: lambda_, ..ExplainOptions::default() },
        recognizer: recognizer.map_or_else(|| manifest.recognizer.clone(), |r| r.spec.clone()),
        baseline_trials,
    };
    let report = py.detach(|| evaluate_corpus(&manifest, &config)).map_err(to_py_err)?;
    to_py_value(py, &report)
}

#[pymodule]
#[pyo3(name = "phonelime")]
fn phonelime_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PhonelimeError", m.py().get_type::<PhonelimeError>())?;
    m.add("RecognizerError", m.py().get_type::<RecognizerError>())?;
    m.add_class::<PyAudioClip>()?;
    m.add_class::<PySegmentation>()?;
    m.add_class::<PyRecognizer>()?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(fit_weighted_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(rank_scores, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(random_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
