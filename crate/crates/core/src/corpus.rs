//! Corpus manifests and the batch evaluation and mistake-analysis harnesses.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, mistake_frequencies, MistakeFrequency, MistakeKey};
use crate::audio::{parse_phn, read_wav, write_wav, AudioClip, Segmentation};
use crate::error::{Error, Result};
use crate::evaluation::{
    grouped_reports, ground_truth_map, mistake_positions, top_segment_report, wilcoxon_signed_rank,
    Judged, SpeakerInfo, TopSegment, ValidityReport, WilcoxonResult,
};
use crate::explainer::{ExplainOptions, Explanation, MutantSet, Transcribe};
use crate::perturbation::{PerturbationPlan, Strategy};
use crate::recognizer::{Recognizer, RecognizerSpec, Transcription};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio_id: String,
    pub wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phn: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<SpeakerInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub recognizer: RecognizerSpec,
    #[serde(default)]
    pub plan: PerturbationPlan,
    /// Directory relative entry paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: CorpusManifest = serde_json::from_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.audio_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate audio_id `{}` in manifest",
                    e.audio_id
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Entries sorted by `audio_id`, the order every report follows.
    pub fn sorted_entries(&self) -> Vec<&ManifestEntry> {
        let mut v: Vec<&ManifestEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| a.audio_id.cmp(&b.audio_id));
        v
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<LoadedEntry> {
        let mut clip = read_wav(self.resolve(&entry.wav))?;
        clip.id = entry.audio_id.clone();
        let expert = entry
            .phn
            .as_ref()
            .map(|p| parse_phn(self.resolve(p)))
            .transpose()?;
        if let Some(seg) = &expert {
            seg.check_fits(&clip)?;
        }
        Ok(LoadedEntry {
            clip,
            expert,
            speaker: entry.speaker.clone().unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub clip: AudioClip,
    pub expert: Option<Segmentation>,
    pub speaker: SpeakerInfo,
}

/// Per-utterance seed derived from the run seed and the utterance id, so each
/// utterance gets its own mask stream regardless of processing order.
pub fn entry_seed(seed: u64, audio_id: &str) -> u64 {
    // FNV-1a, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in audio_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes a synthetic corpus (`<id>.wav`, `<id>.phn`, `manifest.json`) to `out_dir`.
pub fn write_synth_corpus(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::new();
    for u in generate(config)? {
        let wav = PathBuf::from(format!("{}.wav", u.clip.id));
        let phn = PathBuf::from(format!("{}.phn", u.clip.id));
        write_wav(&u.clip, out_dir.join(&wav))?;
        let phn_path = out_dir.join(&phn);
        fs::write(&phn_path, u.phn.to_phn_string()).map_err(|e| Error::io(&phn_path, e))?;
        entries.push(ManifestEntry {
            audio_id: u.clip.id.clone(),
            wav,
            phn: Some(phn),
            speaker: Some(u.speaker),
        });
    }
    let manifest = CorpusManifest {
        entries,
        recognizer: config.recognizer(),
        plan: PerturbationPlan {
            seed: config.seed,
            ..PerturbationPlan::default()
        },
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub strategies: Vec<Strategy>,
    /// Base plan; its `strategy` is overridden per column and its `seed` is the run seed.
    pub plan: PerturbationPlan,
    pub surrogate: ExplainOptions,
    pub recognizer: RecognizerSpec,
    pub baseline_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub audio_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    pub recognizer_failure: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvaluateConfig,
    pub entries: usize,
    /// Recognized phonemes without a matching annotated segment, per strategy.
    pub unmatched_phonemes: BTreeMap<Strategy, usize>,
    pub reports: Vec<ValidityReport>,
    pub failures: Vec<EntryFailure>,
}

/// Fraction of `entries` with at least one recorded failure.
fn failure_rate(failures: &[EntryFailure], entries: usize) -> f64 {
    let ids: BTreeSet<&str> = failures.iter().map(|f| f.audio_id.as_str()).collect();
    if entries == 0 {
        0.0
    } else {
        ids.len() as f64 / entries as f64
    }
}

impl EvaluationReport {
    /// Fraction of entries with at least one failed strategy.
    pub fn failure_rate(&self) -> f64 {
        failure_rate(&self.failures, self.entries)
    }

    pub fn report(&self, group: &str, strategy: Strategy) -> Option<&ValidityReport> {
        self.reports
            .iter()
            .find(|r| r.group == group && r.strategy == strategy)
    }
}

struct EntryRun {
    judged: Vec<Judged>,
    unmatched: usize,
}

fn judge_entry<R: Transcribe + ?Sized>(
    loaded: &LoadedEntry,
    recognizer: &R,
    plan: &PerturbationPlan,
    options: ExplainOptions,
) -> Result<EntryRun> {
    let expert = loaded
        .expert
        .as_ref()
        .ok_or(Error::InvalidArgument(format!("{}: no phn ground truth", loaded.clip.id)))?;
    let set = MutantSet::generate(&loaded.clip, Some(expert), recognizer, plan, options)?;
    let gt = ground_truth_map(&set.original, expert, options.costs);
    let mut judged = Vec::new();
    let mut unmatched = 0;
    for (p, g) in gt.into_iter().enumerate() {
        match g {
            Some(ground_truth) => judged.push(Judged {
                explanation: set.explain(p)?,
                ground_truth,
                speaker: loaded.speaker.clone(),
            }),
            None => unmatched += 1,
        }
    }
    Ok(EntryRun { judged, unmatched })
}

/// Explains every entry under every strategy and scores the explanations.
///
/// Entries run in parallel on the current rayon pool. Failures are recorded
/// and skipped; results are merged in `audio_id` order.
pub fn evaluate_corpus(manifest: &CorpusManifest, config: &EvaluateConfig) -> Result<EvaluationReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("manifest has no entries"));
    }
    if config.strategies.is_empty() {
        return Err(Error::InvalidArgument("no strategies requested".into()));
    }
    config.plan.validate()?;
    let recognizer = Recognizer::new(config.recognizer.clone())?;
    let entries = manifest.sorted_entries();

    let loaded: Vec<Result<LoadedEntry>> = entries.par_iter().map(|e| manifest.load_entry(e)).collect();
    let jobs: Vec<(usize, Strategy)> = (0..entries.len())
        .flat_map(|i| config.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<Result<EntryRun>> = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            let entry = loaded[i].as_ref().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let plan = PerturbationPlan {
                strategy,
                seed: entry_seed(config.plan.seed, &entries[i].audio_id),
                ..config.plan.clone()
            };
            judge_entry(entry, &recognizer, &plan, config.surrogate)
        })
        .collect();

    let mut failures = Vec::new();
    for (i, l) in loaded.iter().enumerate() {
        if let Err(e) = l {
            log::warn!("skipping {}: {e}", entries[i].audio_id);
            failures.push(EntryFailure {
                audio_id: entries[i].audio_id.clone(),
                strategy: None,
                recognizer_failure: false,
                error: e.to_string(),
            });
        }
    }
    let mut per_strategy: BTreeMap<Strategy, Vec<Judged>> = BTreeMap::new();
    let mut unmatched: BTreeMap<Strategy, usize> = BTreeMap::new();
    for (&(i, strategy), run) in jobs.iter().zip(runs) {
        match run {
            Ok(run) => {
                per_strategy.entry(strategy).or_default().extend(run.judged);
                *unmatched.entry(strategy).or_default() += run.unmatched;
            }
            Err(e) if loaded[i].is_ok() => {
                log::warn!("skipping {} ({strategy}): {e}", entries[i].audio_id);
                failures.push(EntryFailure {
                    audio_id: entries[i].audio_id.clone(),
                    strategy: Some(strategy),
                    recognizer_failure: e.is_recognizer_failure(),
                    error: e.to_string(),
                });
            }
            Err(_) => {}
        }
    }

    let mut reports = Vec::new();
    for &strategy in &config.strategies {
        match per_strategy.get(&strategy) {
            Some(items) if !items.is_empty() => reports.extend(grouped_reports(
                strategy,
                items,
                config.baseline_trials,
                config.plan.seed,
            )?),
            _ => log::warn!("no evaluable phonemes for {strategy}"),
        }
    }
    Ok(EvaluationReport {
        config: config.clone(),
        entries: entries.len(),
        unmatched_phonemes: unmatched,
        reports,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    None,
    Gender,
    Dialect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakesConfig {
    pub group_by: GroupBy,
    /// Number of most frequent mistakes analysed per group.
    pub top_mistakes: usize,
    /// Segments reported per mistake.
    pub top_m: usize,
    pub plan: PerturbationPlan,
    pub surrogate: ExplainOptions,
    pub recognizer: RecognizerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeSegments {
    pub mistake: MistakeKey,
    pub n_explanations: usize,
    pub segments: Vec<TopSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeGroup {
    pub group: String,
    pub utterances: usize,
    pub mistakes: Vec<MistakeFrequency>,
    pub top_segments: Vec<MistakeSegments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeReport {
    pub config: MistakesConfig,
    pub entries: usize,
    pub groups: Vec<MistakeGroup>,
    /// Paired comparison of mistake frequencies when exactly two groups exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_comparison: Option<GroupComparison>,
    pub failures: Vec<EntryFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub groups: [String; 2],
    pub mistakes: Vec<MistakeKey>,
    pub test: Option<WilcoxonResult>,
}

impl MistakeReport {
    pub fn failure_rate(&self) -> f64 {
        failure_rate(&self.failures, self.entries)
    }
}

struct Analysed {
    audio_id: String,
    speaker: SpeakerInfo,
    reference: Vec<String>,
    hypothesis: Transcription,
    mutants: Option<MutantSet>,
}

/// Mistake frequencies per speaker group, and for each frequent mistake the
/// segments its explanations rank highest.
pub fn analyse_mistakes(manifest: &CorpusManifest, config: &MistakesConfig) -> Result<MistakeReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("manifest has no entries"));
    }
    config.plan.validate()?;
    let recognizer = Recognizer::new(config.recognizer.clone())?;
    let costs = config.surrogate.costs;
    let entries = manifest.sorted_entries();

    let outcomes: Vec<Result<Analysed>> = entries
        .par_iter()
        .map(|e| {
            let loaded = manifest.load_entry(e)?;
            let expert = loaded
                .expert
                .ok_or(Error::InvalidArgument(format!("{}: no phn reference", e.audio_id)))?;
            let hypothesis = recognizer.transcribe(&loaded.clip)?;
            Ok(Analysed {
                audio_id: e.audio_id.clone(),
                speaker: loaded.speaker,
                reference: expert.labels(),
                hypothesis,
                mutants: None,
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut analysed = Vec::new();
    for (e, o) in entries.iter().zip(outcomes) {
        match o {
            Ok(a) => analysed.push(a),
            Err(err) => {
                log::warn!("skipping {}: {err}", e.audio_id);
                failures.push(EntryFailure {
                    audio_id: e.audio_id.clone(),
                    strategy: None,
                    recognizer_failure: err.is_recognizer_failure(),
                    error: err.to_string(),
                });
            }
        }
    }
    if analysed.is_empty() {
        return Ok(MistakeReport {
            config: config.clone(),
            entries: entries.len(),
            groups: Vec::new(),
            group_comparison: None,
            failures,
        });
    }

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    groups.insert("All".into(), (0..analysed.len()).collect());
    if config.group_by != GroupBy::None {
        for (i, a) in analysed.iter().enumerate() {
            let key = match config.group_by {
                GroupBy::Gender => a.speaker.gender.clone(),
                GroupBy::Dialect => a.speaker.dialect.clone(),
                GroupBy::None => None,
            };
            groups.entry(key.unwrap_or_else(|| "unknown".into())).or_default().push(i);
        }
    }

    let mut frequencies: BTreeMap<String, Vec<MistakeFrequency>> = BTreeMap::new();
    let mut wanted: BTreeSet<usize> = BTreeSet::new();
    for (name, members) in &groups {
        let pairs: Vec<(Vec<String>, Vec<String>)> = members
            .iter()
            .map(|&i| (analysed[i].reference.clone(), analysed[i].hypothesis.phonemes().to_vec()))
            .collect();
        let freq = mistake_frequencies(&pairs, costs)?;
        for m in freq.iter().take(config.top_mistakes) {
            for &i in members {
                let a = &analysed[i];
                if align(&a.reference, a.hypothesis.phonemes(), costs).ops.iter().any(|op| m.key.matches(op)) {
                    wanted.insert(i);
                }
            }
        }
        frequencies.insert(name.clone(), freq);
    }

    // Mutant sets only for utterances that exhibit a reported mistake.
    let sets: Vec<(usize, Result<MutantSet>)> = wanted
        .into_par_iter()
        .map(|i| {
            let a = &analysed[i];
            let entry = entries.iter().find(|e| e.audio_id == a.audio_id).expect("entry");
            let plan = PerturbationPlan {
                seed: entry_seed(config.plan.seed, &a.audio_id),
                ..config.plan.clone()
            };
            let set = manifest.load_entry(entry).and_then(|l| {
                MutantSet::generate(&l.clip, l.expert.as_ref(), &recognizer, &plan, config.surrogate)
            });
            (i, set)
        })
        .collect();
    for (i, set) in sets {
        match set {
            Ok(s) => analysed[i].mutants = Some(s),
            Err(err) => failures.push(EntryFailure {
                audio_id: analysed[i].audio_id.clone(),
                strategy: Some(config.plan.strategy),
                recognizer_failure: err.is_recognizer_failure(),
                error: err.to_string(),
            }),
        }
    }

    let mut out_groups = Vec::new();
    // "All" first, then the remaining groups in name order.
    let mut names: Vec<&String> = groups.keys().collect();
    names.sort_by_key(|n| (n.as_str() != "All", n.as_str()));
    for name in names {
        let members = &groups[name];
        let freq = frequencies.remove(name).unwrap_or_default();
        let mut top_segments = Vec::new();
        for m in freq.iter().take(config.top_mistakes) {
            let mut expls: Vec<Explanation> = Vec::new();
            for &i in members {
                let a = &analysed[i];
                let Some(set) = &a.mutants else { continue };
                let al = align(&a.reference, a.hypothesis.phonemes(), costs);
                for p in mistake_positions(&al, &m.key, a.hypothesis.len()) {
                    expls.push(set.explain(p)?);
                }
            }
            let refs: Vec<&Explanation> = expls.iter().collect();
            let segments = if refs.is_empty() {
                Vec::new()
            } else {
                top_segment_report(&refs, config.top_m)?
            };
            top_segments.push(MistakeSegments {
                mistake: m.key.clone(),
                n_explanations: refs.len(),
                segments,
            });
        }
        out_groups.push(MistakeGroup {
            group: name.clone(),
            utterances: members.len(),
            mistakes: freq,
            top_segments,
        });
    }

    let group_comparison = compare_two_groups(&out_groups, config.top_mistakes);
    Ok(MistakeReport {
        config: config.clone(),
        entries: entries.len(),
        groups: out_groups,
        group_comparison,
        failures,
    })
}

/// Wilcoxon test over the union of both groups' top mistakes, pairing each
/// mistake's frequency in the two groups.
fn compare_two_groups(groups: &[MistakeGroup], top: usize) -> Option<GroupComparison> {
    let sub: Vec<&MistakeGroup> = groups.iter().filter(|g| g.group != "All").collect();
    let [a, b] = sub.as_slice() else { return None };
    let mut keys: BTreeSet<MistakeKey> = BTreeSet::new();
    for g in [a, b] {
        keys.extend(g.mistakes.iter().take(top).map(|m| m.key.clone()));
    }
    let freq = |g: &MistakeGroup, k: &MistakeKey| {
        g.mistakes.iter().find(|m| &m.key == k).map_or(0.0, |m| m.frequency)
    };
    let pairs: Vec<(f64, f64)> = keys.iter().map(|k| (freq(a, k), freq(b, k))).collect();
    Some(GroupComparison {
        groups: [a.group.clone(), b.group.clone()],
        mistakes: keys.into_iter().collect(),
        test: wilcoxon_signed_rank(&pairs).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_seeds_differ_by_id_and_seed() {
        assert_ne!(entry_seed(1, "a"), entry_seed(1, "b"));
        assert_ne!(entry_seed(1, "a"), entry_seed(2, "a"));
        assert_eq!(entry_seed(7, "synth_000"), entry_seed(7, "synth_000"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = ManifestEntry {
            audio_id: "x".into(),
            wav: "x.wav".into(),
            phn: None,
            speaker: None,
        };
        let m = CorpusManifest {
            entries: vec![e.clone(), e],
            recognizer: RecognizerSpec::subprocess(vec!["true".into()]),
            plan: PerturbationPlan::default(),
            base_dir: PathBuf::new(),
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn synth_corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_clips: 4, ..SynthConfig::default() };
        let written = write_synth_corpus(&cfg, dir.path()).unwrap();
        let loaded = CorpusManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries, written.entries);
        let spec = loaded.recognizer.clone();
        for e in &loaded.entries {
            let l = loaded.load_entry(e).unwrap();
            let t = crate::recognizer::transcribe(&spec, &l.clip).unwrap();
            assert_eq!(t.phonemes(), l.expert.unwrap().labels().as_slice());
        }
    }
}
