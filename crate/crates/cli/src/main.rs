//! `phonelime` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 recognizer error,
//! 4 when more than 10% of corpus entries fail.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use phonelime::audio::{parse_phn, read_wav};
use phonelime::corpus::{
    analyse_mistakes, evaluate_corpus, write_synth_corpus, CorpusManifest, EvaluateConfig, GroupBy,
    MistakeReport, MistakesConfig,
};
use phonelime::evaluation::{render_csv, render_table, DEFAULT_BASELINE_TRIALS};
use phonelime::explainer::explain_all;
use phonelime::synth::{SynthConfig, PHONE_INVENTORY};
use phonelime::{
    Error, ExplainOptions, Explanation, PerturbationPlan, Recognizer, RecognizerKind, RecognizerSpec,
    Result, Strategy,
};

/// Entries may fail up to this fraction before the run counts as failed.
const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Parser)]
#[command(name = "phonelime", version, about = "Black-box explanations for phoneme recognizers")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain every phoneme the recognizer emits for one audio file.
    Explain(ExplainArgs),
    /// Score explanations against annotated segments over a corpus.
    Evaluate(EvaluateArgs),
    /// Report frequent transcription mistakes and the segments behind them.
    Mistakes(MistakesArgs),
    /// Generate a synthetic oracle corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticKind {
    Local,
    Contextual,
}

impl From<SyntheticKind> for RecognizerKind {
    fn from(k: SyntheticKind) -> Self {
        match k {
            SyntheticKind::Local => RecognizerKind::SyntheticLocal,
            SyntheticKind::Contextual => RecognizerKind::SyntheticContextual,
        }
    }
}

#[derive(Args)]
struct RunFlags {
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical CPUs).
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON file of settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Explanation strategy; comma separated for `evaluate`.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Window length of lime-ws and lime-ts, in segments.
    #[arg(long)]
    window_k: Option<usize>,
    /// Mutants sampled per window position.
    #[arg(long)]
    n_per_window: Option<usize>,
    /// Mutants sampled by lime.
    #[arg(long)]
    n_global: Option<usize>,
    /// Per-segment masking probability of lime.
    #[arg(long)]
    mask_prob: Option<f64>,
    /// Time segment duration for lime-ts, in milliseconds.
    #[arg(long)]
    ts_ms: Option<f64>,
    /// Ridge penalty of the surrogate model.
    #[arg(long)]
    lambda: Option<f64>,
    /// Recognizer command line; the WAV path is appended as the last argument.
    #[arg(long, conflicts_with = "synthetic")]
    recognizer_cmd: Option<String>,
    /// Per-call recognizer timeout, in seconds.
    #[arg(long)]
    timeout_s: Option<f64>,
    /// Maximum concurrent recognizer processes.
    #[arg(long)]
    max_procs: Option<usize>,
    /// Use a built-in synthetic recognizer.
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticKind>,
    /// Slot duration of the synthetic recognizer, in milliseconds.
    #[arg(long)]
    slot_ms: Option<f64>,
    /// Vocabulary of the synthetic recognizer, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "vocab_size")]
    vocab: Option<Vec<String>>,
    /// Use the first N labels of the built-in phone inventory as vocabulary.
    #[arg(long)]
    vocab_size: Option<usize>,
}

impl RunFlags {
    fn config_file(&self) -> Result<Option<Value>> {
        self.config.as_deref().map(config::load_file).transpose()
    }

    fn apply_plan(&self, plan: &mut PerturbationPlan) {
        if let Some(v) = self.seed {
            plan.seed = v;
        }
        if let Some(v) = self.window_k {
            plan.window_k = v;
        }
        if let Some(v) = self.n_per_window {
            plan.n_per_window = v;
        }
        if let Some(v) = self.n_global {
            plan.n_global = v;
        }
        if let Some(v) = self.mask_prob {
            plan.mask_prob = v;
        }
        if let Some(v) = self.ts_ms {
            plan.ts_duration_ms = v;
        }
    }

    fn apply_surrogate(&self, surrogate: &mut ExplainOptions) {
        if let Some(v) = self.lambda {
            surrogate.lambda = v;
        }
    }

    /// A single strategy, for commands that explain with one method.
    fn single_strategy(&self) -> Result<Option<Strategy>> {
        match self.strategy.as_slice() {
            [] => Ok(None),
            [s] => Ok(Some(*s)),
            _ => Err(Error::InvalidArgument("this command takes a single --strategy".into())),
        }
    }

    fn apply_recognizer(&self, base: Option<RecognizerSpec>) -> Result<Option<RecognizerSpec>> {
        let mut spec = base;
        if let Some(cmd) = &self.recognizer_cmd {
            let argv = shlex::split(cmd)
                .filter(|a| !a.is_empty())
                .ok_or_else(|| Error::InvalidArgument(format!("cannot parse --recognizer-cmd `{cmd}`")))?;
            let mut s = spec.unwrap_or_else(|| RecognizerSpec::subprocess(Vec::new()));
            s.kind = RecognizerKind::Subprocess;
            s.command = argv;
            spec = Some(s);
        }
        if let Some(kind) = self.synthetic {
            let mut s = spec.unwrap_or_else(|| SynthConfig::default().recognizer());
            s.kind = kind.into();
            if s.vocab.is_empty() {
                s.vocab = SynthConfig::default().vocab();
            }
            spec = Some(s);
        }
        if let Some(s) = spec.as_mut() {
            if let Some(v) = &self.vocab {
                s.vocab = v.clone();
            }
            if let Some(n) = self.vocab_size {
                if n == 0 || n > PHONE_INVENTORY.len() {
                    return Err(Error::InvalidArgument(format!(
                        "--vocab-size must lie in 1..={}",
                        PHONE_INVENTORY.len()
                    )));
                }
                s.vocab = PHONE_INVENTORY[..n].iter().map(|p| p.to_string()).collect();
            }
            if let Some(v) = self.slot_ms {
                s.slot_ms = v;
            }
            if let Some(v) = self.timeout_s {
                s.timeout_s = v;
            }
            if let Some(v) = self.max_procs {
                s.max_procs = Some(v);
            }
        }
        Ok(spec)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

#[derive(Args)]
struct ExplainArgs {
    /// 16-bit PCM mono WAV file.
    #[arg(long)]
    wav: PathBuf,
    /// Phoneme annotation; required by lime and lime-ws.
    #[arg(long)]
    phn: Option<PathBuf>,
    /// Utterance id recorded in the output (default: the WAV file stem).
    #[arg(long)]
    id: Option<String>,
    /// Output directory, one JSON file per phoneme.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Corpus manifest (JSON).
    manifest: PathBuf,
    /// Monte-Carlo trials of the random-ranking baseline.
    #[arg(long)]
    baseline_trials: Option<usize>,
    /// Also write the report as CSV.
    #[arg(long)]
    emit_csv: bool,
    /// Output directory for the JSON, table and CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct MistakesArgs {
    /// Corpus manifest (JSON).
    manifest: PathBuf,
    /// Speaker attribute the report is split by.
    #[arg(long, value_enum)]
    group_by: Option<GroupByArg>,
    /// Number of most frequent mistakes analysed per group.
    #[arg(long)]
    top_mistakes: Option<usize>,
    /// Segments reported per mistake.
    #[arg(long)]
    top_m: Option<usize>,
    /// Output directory for the JSON and table reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupByArg {
    None,
    Gender,
    Dialect,
}

impl From<GroupByArg> for GroupBy {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::None => GroupBy::None,
            GroupByArg::Gender => GroupBy::Gender,
            GroupByArg::Dialect => GroupBy::Dialect,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of clips.
    #[arg(long)]
    n_clips: Option<usize>,
    /// Slots (phonemes) per clip.
    #[arg(long)]
    slots: Option<usize>,
    /// Slot duration, in milliseconds.
    #[arg(long)]
    slot_ms: Option<f64>,
    /// Vocabulary size, a prefix of the built-in phone inventory.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Generate for the contextual recognizer.
    #[arg(long)]
    contextual: bool,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file of settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for WAV, PHN and manifest files.
    #[arg(long)]
    out: PathBuf,
}

enum Outcome {
    Done,
    TooManyFailures(f64),
}

#[derive(Serialize, Deserialize)]
struct ExplainConfig {
    plan: PerturbationPlan,
    surrogate: ExplainOptions,
    recognizer: Option<RecognizerSpec>,
}

#[derive(Serialize)]
struct ExplainRecord<'a> {
    config: &'a ExplainConfig,
    explanation: &'a Explanation,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))
}

fn cmd_explain(args: ExplainArgs) -> Result<Outcome> {
    let run = &args.run;
    let file = run.config_file()?;
    let base = ExplainConfig {
        plan: PerturbationPlan::default(),
        surrogate: ExplainOptions::default(),
        recognizer: None,
    };
    let mut cfg = config::layer(base, file.as_ref())?;
    run.apply_plan(&mut cfg.plan);
    if let Some(s) = run.single_strategy()? {
        cfg.plan.strategy = s;
    }
    run.apply_surrogate(&mut cfg.surrogate);
    cfg.recognizer = run.apply_recognizer(cfg.recognizer.take())?;
    let spec = cfg.recognizer.clone().ok_or_else(|| {
        Error::InvalidArgument("no recognizer: pass --recognizer-cmd or --synthetic".into())
    })?;
    cfg.plan.validate()?;

    let mut clip = read_wav(&args.wav)?;
    clip.id = match &args.id {
        Some(id) => id.clone(),
        None => args
            .wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".into()),
    };
    let expert = args.phn.as_deref().map(parse_phn).transpose()?;
    if let Some(seg) = &expert {
        seg.check_fits(&clip)?;
    }
    let recognizer = Recognizer::new(spec)?;
    let explanations =
        run.pool()?.install(|| explain_all(&clip, expert.as_ref(), &recognizer, &cfg.plan, cfg.surrogate))?;

    create_dir(&args.out)?;
    for e in &explanations {
        let path = args.out.join(format!("{}_{:03}.json", clip.id, e.position));
        write_json(&path, &ExplainRecord { config: &cfg, explanation: e })?;
        let top: Vec<String> = e.top(3).iter().map(|i| i.to_string()).collect();
        println!("{:>4} {:<6} top segments [{}]", e.position, e.phoneme, top.join(", "));
    }
    log::info!("wrote {} explanations to {}", explanations.len(), args.out.display());
    Ok(Outcome::Done)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let run = &args.run;
    let file = run.config_file()?;
    let manifest = CorpusManifest::load(&args.manifest)?;
    let base = EvaluateConfig {
        strategies: Strategy::ALL.to_vec(),
        plan: manifest.plan.clone(),
        surrogate: ExplainOptions::default(),
        recognizer: manifest.recognizer.clone(),
        baseline_trials: DEFAULT_BASELINE_TRIALS,
    };
    let mut cfg = config::layer(base, file.as_ref())?;
    if !run.strategy.is_empty() {
        cfg.strategies = run.strategy.clone();
    }
    run.apply_plan(&mut cfg.plan);
    run.apply_surrogate(&mut cfg.surrogate);
    cfg.recognizer = run.apply_recognizer(Some(cfg.recognizer))?.expect("recognizer present");
    if let Some(t) = args.baseline_trials {
        cfg.baseline_trials = t;
    }

    let report = run.pool()?.install(|| evaluate_corpus(&manifest, &cfg))?;
    let table = render_table(&report.reports);
    print!("{table}");
    if !report.failures.is_empty() {
        eprintln!("warning: {} entry/strategy runs failed and were skipped", report.failures.len());
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("evaluation.json"), &report)?;
        write_text(&out.join("evaluation.txt"), &table)?;
        if args.emit_csv {
            write_text(&out.join("evaluation.csv"), &render_csv(&report.reports))?;
        }
    }
    let rate = report.failure_rate();
    Ok(if rate > MAX_FAILURE_RATE { Outcome::TooManyFailures(rate) } else { Outcome::Done })
}

fn render_mistakes(report: &MistakeReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        let _ = writeln!(out, "{} ({} utterances)", g.group, g.utterances);
        for (m, segs) in g.mistakes.iter().zip(&g.top_segments) {
            let _ = writeln!(out, "  {:<16} {:.3}  ({} explanations)", m.key.to_string(), m.frequency, segs.n_explanations);
            for s in &segs.segments {
                let label = s.label.as_deref().unwrap_or("-");
                let _ = writeln!(out, "      segment {:>3} {:<6} {:.3}", s.segment, label, s.frequency);
            }
        }
        out.push('\n');
    }
    if let Some(c) = &report.group_comparison {
        match &c.test {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "{} vs {}: Wilcoxon W={} n={} p={:.4}{}",
                    c.groups[0],
                    c.groups[1],
                    t.statistic,
                    t.n,
                    t.p_value,
                    if t.significant_at_5pct { " (significant at 5%)" } else { "" }
                );
            }
            None => {
                let _ = writeln!(out, "{} vs {}: no test (all paired differences zero)", c.groups[0], c.groups[1]);
            }
        }
    }
    out
}

fn cmd_mistakes(args: MistakesArgs) -> Result<Outcome> {
    let run = &args.run;
    let file = run.config_file()?;
    let manifest = CorpusManifest::load(&args.manifest)?;
    let base = MistakesConfig {
        group_by: GroupBy::None,
        top_mistakes: 5,
        top_m: 5,
        plan: manifest.plan.clone(),
        surrogate: ExplainOptions::default(),
        recognizer: manifest.recognizer.clone(),
    };
    let mut cfg = config::layer(base, file.as_ref())?;
    if let Some(g) = args.group_by {
        cfg.group_by = g.into();
    }
    if let Some(v) = args.top_mistakes {
        cfg.top_mistakes = v;
    }
    if let Some(v) = args.top_m {
        cfg.top_m = v;
    }
    run.apply_plan(&mut cfg.plan);
    if let Some(s) = run.single_strategy()? {
        cfg.plan.strategy = s;
    }
    run.apply_surrogate(&mut cfg.surrogate);
    cfg.recognizer = run.apply_recognizer(Some(cfg.recognizer))?.expect("recognizer present");

    let report = run.pool()?.install(|| analyse_mistakes(&manifest, &cfg))?;
    let text = render_mistakes(&report);
    print!("{text}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("mistakes.json"), &report)?;
        write_text(&out.join("mistakes.txt"), &text)?;
    }
    let rate = report.failure_rate();
    Ok(if rate > MAX_FAILURE_RATE { Outcome::TooManyFailures(rate) } else { Outcome::Done })
}

fn cmd_synth(args: SynthArgs) -> Result<Outcome> {
    let file = args.config.as_deref().map(config::load_file).transpose()?;
    let mut cfg = config::layer(SynthConfig::default(), file.as_ref())?;
    if let Some(v) = args.n_clips {
        cfg.n_clips = v;
    }
    if let Some(v) = args.slots {
        cfg.slots_per_clip = v;
    }
    if let Some(v) = args.slot_ms {
        cfg.slot_ms = v;
    }
    if let Some(v) = args.vocab_size {
        cfg.vocab_size = v;
    }
    if args.contextual {
        cfg.contextual = true;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    create_dir(&args.out)?;
    let manifest = write_synth_corpus(&cfg, &args.out)?;
    write_json(&args.out.join("synth_config.json"), &cfg)?;
    println!("{}", args.out.join("manifest.json").display());
    log::info!("wrote {} clips", manifest.entries.len());
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match cli.command {
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Mistakes(a) => cmd_mistakes(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::TooManyFailures(rate)) => {
            eprintln!("error: {:.1}% of entries failed", rate * 100.0);
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_recognizer_failure() { 3 } else { 2 })
        }
    }
}
