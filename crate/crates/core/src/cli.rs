//! Command-line front end. Every subcommand is a thin wrapper over library
//! calls; `run` maps failures to exit codes (1 usage, 2 data).

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baseline::iforest::{IForestConfig, IForestRejector};
use crate::baseline::p2p::{p2p_reject, DEFAULT_P2P_UV};
use crate::bench::{run_bench, BenchConfig};
use crate::decoder::crossval::{crossval, CrossvalConfig, ExternalDecisions, RejectInput, Rejector, Scheme};
use crate::decoder::filter::bandpass_epochs;
use crate::error::{FaarError, Result};
use crate::faar::{faar_reject, FaarConfig};
use crate::io::{read_faar, read_jsonl, run_stream, write_epochs, write_jsonl, write_recording, StreamConfig};
use crate::knee::{reject, select_threshold};
use crate::metrics::{real_time_factor, summarize};
use crate::model::{EpochTensor, RejectionDecision};
use crate::reference::{calibrate_epochs, calibrate_recording, ReferenceModel};
use crate::scenario::{heterogeneous_study, planted, study, subject, SubjectSpec};
use crate::sqi::score_epochs;
use crate::synth::{gen_clean, gen_recording, ArtifactLabel, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "faar", version, about = "Self-calibrating EEG epoch artifact rejection")]
pub struct Cli {
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Fit a clean reference and save it as JSON.
    Calibrate(CalibrateArgs),
    /// Per-epoch SQI as JSONL.
    Score(ScoreArgs),
    /// Per-epoch rejection decisions as JSONL.
    Reject(RejectArgs),
    /// Cross-validated decoding study.
    Eval(EvalArgs),
    /// Score framed windows from standard input.
    Stream(StreamArgs),
    /// Real-time-factor report for the streaming scorer.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    /// Clean epochs.
    Clean,
    /// Clean epochs with planted artifacts; `--truth` receives the labels.
    Planted,
    /// One labelled two-class subject with several sessions.
    TwoClass,
    /// Several two-class subjects with contamination rising from 0 to `--max-rate`.
    Study,
    /// A continuous clean recording.
    Recording,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Faar,
    /// Handshake line plus frames, ready for `faar stream`.
    Stream,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "faar")]
    pub format: OutputFormat,
    /// Ground-truth artifact labels (JSONL).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub epoch_s: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, default_value_t = 5.0)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub scale_max: f64,
    #[arg(long, default_value_t = 3.0)]
    pub gain_ratio: f64,
    #[arg(long, default_value_t = 2)]
    pub sessions: usize,
    #[arg(long, default_value_t = 12)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0.2)]
    pub max_rate: f64,
    /// Window length used for `--format stream`.
    #[arg(long, default_value_t = 1.0)]
    pub window_s: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Reference model JSON; without it the batch calibrates itself and
    /// each line also carries the knee decision.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RejectMethod {
    Faar,
    P2p,
    Iforest,
}

#[derive(Debug, Args)]
pub struct RejectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "faar")]
    pub method: RejectMethod,
    /// Reference model JSON for `faar`; the threshold still comes from this batch.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub threshold_uv: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// `none`, `faar`, `p2p`, `iforest` or `external:<decisions.jsonl>`.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectorSpec {
    None,
    Faar,
    P2p,
    IForest,
    External(PathBuf),
}

impl RejectorSpec {
    pub fn name(&self) -> String {
        match self {
            RejectorSpec::None => "none".into(),
            RejectorSpec::Faar => "faar".into(),
            RejectorSpec::P2p => "p2p".into(),
            RejectorSpec::IForest => "iforest".into(),
            RejectorSpec::External(p) => format!("external:{}", p.display()),
        }
    }
}

pub fn parse_rejector(s: &str) -> std::result::Result<RejectorSpec, String> {
    match s {
        "none" => Ok(RejectorSpec::None),
        "faar" => Ok(RejectorSpec::Faar),
        "p2p" => Ok(RejectorSpec::P2p),
        "iforest" => Ok(RejectorSpec::IForest),
        _ => match s.strip_prefix("external:") {
            Some(p) if !p.is_empty() => Ok(RejectorSpec::External(PathBuf::from(p))),
            _ => Err(format!("unknown rejector {s:?}; expected none, faar, p2p, iforest or external:<path>")),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    CrossSession,
    CrossSubject,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::CrossSession => Scheme::CrossSession,
            SchemeArg::CrossSubject => Scheme::CrossSubject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RejectOn {
    Filtered,
    Raw,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "cross-session")]
    pub scheme: SchemeArg,
    /// Repeatable. Win rates are reported against `none` when it is present.
    #[arg(long = "rejector", value_parser = parse_rejector, default_values = ["none", "faar"])]
    pub rejectors: Vec<RejectorSpec>,
    /// StudySummary JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-subject CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub reject_on: Option<RejectOn>,
    /// Add wall-clock real-time factors (not reproducible across runs).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub threshold_uv: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub warmup_s: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub buffer: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Contents of `--config`. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub faar: FaarConfig,
    pub iforest: IForestConfig,
    pub p2p_threshold_uv: Option<f64>,
    pub crossval: CrossvalConfig,
    pub stream: StreamConfig,
    pub synth: SynthConfig,
    pub bench: BenchConfig,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| FaarError::BadConfig(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FaarError::BadConfig(format!("config {}: {e}", path.display())))
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }

    fn iforest_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(self.iforest.seed)
    }

    fn p2p(&self, flag: Option<f64>) -> f64 {
        flag.or(self.p2p_threshold_uv).unwrap_or(DEFAULT_P2P_UV)
    }
}

/// Writes to the named file, or to `stdout` when there is none.
fn sink<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

fn load_epochs(path: &Path) -> Result<EpochTensor> {
    read_faar(path)?.into_epochs()
}

fn load_model(path: &Path) -> Result<ReferenceModel> {
    ReferenceModel::from_json(&fs::read_to_string(path)?)
}

/// Parses `argv` (program name first) and runs it against the given streams.
pub fn run_with(argv: &[String], stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            let _ = writeln!(stderr, "{line}");
            return EXIT_USAGE;
        }
    };
    match dispatch(&cli, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                FaarError::BadConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut err = io::stderr();
    run_with(&argv, &mut input, &mut out, &mut err)
}

pub fn dispatch(cli: &Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => synth(a, &file),
        Command::Calibrate(a) => calibrate(a, &file, stdout),
        Command::Score(a) => score(a, &file, stdout),
        Command::Reject(a) => reject_cmd(a, &file, stdout),
        Command::Eval(a) => eval(a, &file, stdout),
        Command::Stream(a) => {
            let cfg = StreamConfig {
                warmup_s: a.warmup_s.unwrap_or(file.stream.warmup_s),
                lambda: a.lambda.unwrap_or(file.stream.lambda),
                buffer: a.buffer.unwrap_or(file.stream.buffer),
                ..file.stream
            };
            run_stream(stdin, stdout, &cfg).map(|_| ())
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                channels: a.channels.unwrap_or(file.bench.channels),
                fs: a.fs.unwrap_or(file.bench.fs),
                duration_s: a.duration_s.unwrap_or(file.bench.duration_s),
                seed: file.seed(a.seed),
                ..file.bench
            };
            let report = run_bench(&cfg, &file.stream)?;
            let mut w = sink(&a.out, stdout)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            Ok(())
        }
    }
}

fn synth(a: &SynthArgs, file: &FileConfig) -> Result<()> {
    let base = &file.synth;
    let cfg = SynthConfig {
        n_channels: a.channels.unwrap_or(base.n_channels),
        fs: a.fs.unwrap_or(base.fs),
        epoch_s: a.epoch_s.unwrap_or(base.epoch_s),
        n_epochs: a.epochs.unwrap_or(base.n_epochs),
        seed: file.seed(a.seed),
        ..base.clone()
    };
    let spec = SubjectSpec {
        subject_id: cfg.subject_id.clone(),
        sessions: a.sessions,
        epochs_per_class: cfg.n_epochs.div_ceil(2),
        n_channels: cfg.n_channels,
        gain_ratio: a.gain_ratio,
        contamination: a.fraction,
        artifact_scale: (a.scale_min, a.scale_max),
        seed: cfg.seed,
        ..SubjectSpec::default()
    };
    let mut truth: Option<Vec<ArtifactLabel>> = None;
    let epochs = match a.kind {
        CorpusKind::Recording => {
            let rec = gen_recording(&cfg, a.duration_s)?;
            return match a.format {
                OutputFormat::Faar => write_recording(&a.out, &rec),
                OutputFormat::Stream => {
                    Ok(fs::write(&a.out, crate::io::stream::encode_recording(&rec, a.window_s, cfg.epoch_s)?)?)
                }
            };
        }
        CorpusKind::Clean => gen_clean(&cfg)?,
        CorpusKind::Planted => {
            let p = planted(&cfg, a.fraction, (a.scale_min, a.scale_max))?;
            truth = Some(p.labels);
            p.epochs
        }
        CorpusKind::TwoClass => {
            let (e, t) = subject(&spec, 0)?;
            truth = Some(t);
            e
        }
        CorpusKind::Study => {
            let (e, t) = study(&heterogeneous_study(a.subjects, a.max_rate, &spec))?;
            truth = Some(t);
            e
        }
    };
    if a.format == OutputFormat::Stream {
        return Err(FaarError::BadConfig("--format stream needs --kind recording".into()));
    }
    write_epochs(&a.out, &epochs)?;
    if let (Some(path), Some(t)) = (&a.truth, truth) {
        write_jsonl(BufWriter::new(File::create(path)?), &t)?;
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs, file: &FileConfig, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = file.faar.calibration;
    if let Some(w) = a.window_s {
        cfg.window_len_s = w;
    }
    let model = match read_faar(&a.input)? {
        crate::io::FaarData::Recording(r) => calibrate_recording(&r, &cfg)?.model,
        crate::io::FaarData::Epochs(e) => calibrate_epochs(&e, &cfg)?.model,
    };
    let mut w = sink(&a.out, stdout)?;
    writeln!(w, "{}", model.to_json()?)?;
    Ok(())
}

fn score(a: &ScoreArgs, file: &FileConfig, stdout: &mut dyn Write) -> Result<()> {
    let e = load_epochs(&a.input)?;
    let records: Vec<_> = match &a.model {
        Some(p) => {
            let m = load_model(p)?;
            score_epochs(&e, &m, m.window_len_s)?.iter().map(|r| r.record(None)).collect()
        }
        None => {
            let out = faar_reject(&e, &file.faar)?;
            out.reports.iter().zip(&out.decisions).map(|(r, d)| r.record(Some(d.rejected))).collect()
        }
    };
    write_jsonl(sink(&a.out, stdout)?, &records)
}

/// Library call behind `reject`.
pub fn reject_batch(
    e: &EpochTensor,
    method: RejectMethod,
    model: Option<&ReferenceModel>,
    file: &FileConfig,
    threshold_uv: Option<f64>,
    seed: Option<u64>,
) -> Result<Vec<RejectionDecision>> {
    match method {
        RejectMethod::Faar => match model {
            Some(m) => {
                let reports = score_epochs(e, m, m.window_len_s)?;
                let sqis: Vec<f64> = reports.iter().map(|r| r.sqi).collect();
                Ok(reject(&reports, select_threshold(&sqis, file.faar.sensitivity)?))
            }
            None => Ok(faar_reject(e, &file.faar)?.decisions),
        },
        RejectMethod::P2p => p2p_reject(e, file.p2p(threshold_uv)),
        RejectMethod::Iforest => {
            let cfg = IForestConfig { seed: file.iforest_seed(seed), ..file.iforest };
            IForestRejector::fit(e, &cfg)?.decide(e)
        }
    }
}

fn reject_cmd(a: &RejectArgs, file: &FileConfig, stdout: &mut dyn Write) -> Result<()> {
    let e = load_epochs(&a.input)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let d = reject_batch(&e, a.method, model.as_ref(), file, a.threshold_uv, a.seed)?;
    write_jsonl(sink(&a.out, stdout)?, &d)
}

fn build_rejector(spec: &RejectorSpec, file: &FileConfig, threshold_uv: Option<f64>, seed: Option<u64>) -> Result<Rejector> {
    Ok(match spec {
        RejectorSpec::None => Rejector::None,
        RejectorSpec::Faar => Rejector::Faar(file.faar),
        RejectorSpec::P2p => Rejector::P2p { threshold_uv: file.p2p(threshold_uv) },
        RejectorSpec::IForest => {
            Rejector::IForest(IForestConfig { seed: file.iforest_seed(seed), ..file.iforest })
        }
        RejectorSpec::External(p) => {
            let d: Vec<RejectionDecision> = read_jsonl(BufReader::new(File::open(p)?))?;
            Rejector::External(ExternalDecisions::from_decisions(&d))
        }
    })
}

/// Seconds to fit and apply `r` on the whole batch, per second of signal.
fn rejector_rtf(r: &Rejector, e: &EpochTensor) -> Result<f64> {
    let t = Instant::now();
    r.masks(e, e)?;
    real_time_factor(t.elapsed().as_secs_f64(), e.n_epochs() as f64 * e.epoch_s())
}

fn eval(a: &EvalArgs, file: &FileConfig, stdout: &mut dyn Write) -> Result<()> {
    let e = load_epochs(&a.input)?;
    let scheme: Scheme = a.scheme.into();
    let cv = CrossvalConfig {
        reject_on: match a.reject_on {
            Some(RejectOn::Raw) => RejectInput::Raw,
            Some(RejectOn::Filtered) => RejectInput::Filtered,
            None => file.crossval.reject_on,
        },
        ..file.crossval
    };
    let mut results = Vec::with_capacity(a.rejectors.len());
    let mut timing = std::collections::BTreeMap::new();
    let timing_input = if a.timing {
        Some(match cv.reject_on {
            RejectInput::Filtered => bandpass_epochs(&e, cv.decoder.band.0, cv.decoder.band.1)?,
            RejectInput::Raw => e.clone(),
        })
    } else {
        None
    };
    for spec in &a.rejectors {
        let r = build_rejector(spec, file, a.threshold_uv, a.seed)?;
        results.push((spec.name(), crossval(&e, &r, scheme, &cv)?));
        if let Some(batch) = &timing_input {
            timing.insert(spec.name(), rejector_rtf(&r, batch)?);
        }
    }
    let baseline = if a.rejectors.contains(&RejectorSpec::None) { "none".to_string() } else { a.rejectors[0].name() };
    let mut summary = summarize(&scheme.to_string(), &baseline, &results)?;
    if a.timing {
        summary.real_time_factor = Some(timing);
    }
    if let Some(p) = &a.csv {
        summary.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let mut w = sink(&a.out, stdout)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    Ok(())
}
