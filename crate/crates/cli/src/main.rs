use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vocalid::backend::{self, BackendOptions, ScoreSet};
use vocalid::baseline::{self, AdlerOptions, Pairing};
use vocalid::data::{self, Format, SpeakerDataset};
use vocalid::entropy;
use vocalid::experiment::{self, ExperimentConfig, InputSpec, Measure, RenderFormat, Sweep};
use vocalid::quantizer::{self, LloydMaxOptions, QuantizerBank, Representation};
use vocalid::synth::{self, PopulationSpec, Stds};
use vocalid::{Error, Result};

const WORKERS_ENV: &str = "VOCALID_WORKERS";

#[derive(Parser)]
#[command(name = "vocalid", version, about = "Speaker information content and verification toolkit")]
struct Cli {
    /// JSON file whose keys override the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and convert it between CSV and binary.
    Ingest(IngestArgs),
    /// Partition speakers into development and measurement sets.
    Split(SplitArgs),
    /// Train a per-element Lloyd-Max quantizer bank.
    QuantizeTrain(QuantizeTrainArgs),
    /// Quantize a dataset and write the dequantized vectors.
    QuantizeApply(QuantizeApplyArgs),
    /// Run one information measure and print JSON.
    Measure(MeasureArgs),
    /// Fit whitening, LDA and PLDA on development data.
    BackendTrain(BackendTrainArgs),
    /// Score verification trials and report the equal error rate.
    Eer(EerArgs),
    /// Generate a synthetic Gaussian speaker population.
    Synth(SynthArgs),
    /// Run a full experiment and write report tables.
    Run(RunArgs),
    /// Render a table JSON file as csv, markdown or json.
    Render(RenderArgs),
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    output_format: Option<Format>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long, default_value_t = 0.5)]
    dev_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dev_out: PathBuf,
    #[arg(long)]
    measure_out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizeTrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long)]
    bits: u8,
    #[arg(long, default_value = "quantum_value")]
    representation: String,
    #[arg(long, default_value_t = LloydMaxOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = LloydMaxOptions::default().max_iter)]
    max_iter: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizeApplyArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Overrides the bank's representation.
    #[arg(long)]
    representation: Option<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_parser = parse_format)]
    output_format: Option<Format>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureArgs {
    /// mutual_info, daugman, adler or score_kl.
    #[arg(long)]
    measure: String,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Quantizer bank; without one, a bank is trained on the input.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long, default_value = "between_speaker")]
    pairing: String,
    #[arg(long, default_value_t = AdlerOptions::default().shrinkage)]
    shrinkage: f64,
    #[arg(long)]
    ridge: Option<f64>,
    /// `label,score` CSV for score_kl.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendTrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Quantize the development data with this bank before fitting.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    speaker_dim: Option<usize>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    eigen_floor: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EerArgs {
    /// Precomputed `label,score` CSV; otherwise trials are built from
    /// `--model` and `--input`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    scores_out: Option<PathBuf>,
    /// FAR/FRR table as CSV.
    #[arg(long)]
    det_out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    between_std: f64,
    #[arg(long, default_value_t = 0.5)]
    within_std: f64,
    #[arg(long, default_value_t = 1000)]
    n_speakers: usize,
    #[arg(long, default_value_t = 100)]
    k_samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunArgs {
    /// Dataset file; the standard synthetic population when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    bits: Vec<u8>,
    #[arg(long)]
    representation: Option<String>,
    #[arg(long, value_delimiter = ',')]
    measures: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    n_speakers: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    k_samples: Vec<usize>,
    #[arg(long)]
    lda_dim: Option<usize>,
    #[arg(long)]
    speaker_dim: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))? {
        Value::Object(map) => Ok(map),
        _ => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
    }
}

/// Flags with config-file keys laid over them.
fn overlay<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(args) };
    let mut base = serde_json::to_value(&args)?;
    let obj = base.as_object_mut().expect("flag structs serialize to objects");
    obj.extend(read_config(path)?);
    serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn format_for(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| Format::from_path(path))
}

fn load(path: &Path, format: Option<Format>) -> Result<SpeakerDataset> {
    data::load(path, format_for(path, format))
}

fn load_bank(path: &Path) -> Result<QuantizerBank> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    QuantizerBank::from_json(&text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn summary(ds: &SpeakerDataset) -> Value {
    serde_json::json!({
        "speakers": ds.n_speakers(),
        "vectors": ds.n_vectors(),
        "dim": ds.dim(),
    })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let ds = load(&a.input, a.format)?;
    if let Some(out) = &a.output {
        data::save(&ds, out, format_for(out, a.output_format))?;
    }
    print_json(&summary(&ds))
}

fn split(a: SplitArgs) -> Result<()> {
    let ds = load(&a.input, a.format)?;
    let (dev, measure) = data::split_by_speaker(&ds, a.dev_fraction, a.seed)?;
    let fmt = format_for(&a.input, a.format);
    data::save(&dev, &a.dev_out, fmt)?;
    data::save(&measure, &a.measure_out, fmt)?;
    print_json(&serde_json::json!({ "dev": summary(&dev), "measure": summary(&measure) }))
}

fn quantize_train(a: QuantizeTrainArgs) -> Result<()> {
    let ds = load(&a.input, a.format)?;
    let opts = LloydMaxOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let bank = quantizer::train_bank(&ds, a.bits, parse(&a.representation)?, &opts)?;
    write_text(&a.output, &bank.to_json()?)
}

fn quantize_apply(a: QuantizeApplyArgs) -> Result<()> {
    let mut bank = load_bank(&a.bank)?;
    if let Some(r) = &a.representation {
        bank = bank.with_representation(parse::<Representation>(r)?);
    }
    let ds = load(&a.input, a.format)?;
    let out = quantizer::requantize_dataset(&bank, &ds)?;
    data::save(&out, &a.output, format_for(&a.output, a.output_format))
}

fn measure(a: MeasureArgs) -> Result<()> {
    let which: Measure = parse(&a.measure)?;
    let input = || -> Result<SpeakerDataset> {
        let path = a.input.as_deref().ok_or_else(|| Error::Config(format!("{} needs --input", a.measure)))?;
        load(path, a.format)
    };
    let bank_for = |ds: &SpeakerDataset, default_bits: Option<u8>| -> Result<QuantizerBank> {
        match (&a.bank, a.bits.or(default_bits)) {
            (Some(path), _) => load_bank(path),
            (None, Some(bits)) => quantizer::train_bank(ds, bits, Representation::default(), &LloydMaxOptions::default()),
            (None, None) => Err(Error::Config("provide --bank or --bits".into())),
        }
    };
    match which {
        Measure::MutualInfo => {
            let ds = input()?;
            let bank = bank_for(&ds, None)?;
            print_json(&entropy::mutual_information(&quantizer::quantize_dataset(&bank, &ds)?)?)
        }
        Measure::Daugman => {
            let ds = input()?;
            let bank = bank_for(&ds, Some(1))?;
            let pairing: Pairing = parse(&a.pairing)?;
            print_json(&baseline::hamming_dof(&quantizer::quantize_dataset(&bank, &ds)?, pairing)?)
        }
        Measure::Adler => {
            let opts = AdlerOptions {
                shrinkage: a.shrinkage,
                ridge: a.ridge,
            };
            print_json(&baseline::adler_information(&input()?, &opts)?)
        }
        Measure::ScoreKl => {
            let path = a.scores.as_deref().ok_or_else(|| Error::Config("score_kl needs --scores".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let s = ScoreSet::from_csv(&text)?;
            let kl = baseline::score_space_kl(&s.genuine, &s.impostor, a.bins)?;
            print_json(&serde_json::json!({ "bits": kl, "n_bins": a.bins }))
        }
        Measure::Eer => Err(Error::Config("use the eer subcommand for equal error rates".into())),
    }
}

fn backend_train(a: BackendTrainArgs) -> Result<()> {
    let mut dev = load(&a.input, a.format)?;
    if let Some(path) = &a.bank {
        dev = quantizer::requantize_dataset(&load_bank(path)?, &dev)?;
    }
    let opts = BackendOptions {
        lda_dim: a.lda_dim,
        speaker_dim: a.speaker_dim,
        iterations: a.iters,
        eigen_floor: a.eigen_floor,
    };
    let model = backend::fit_backend(&dev, &opts)?;
    backend::save_model(&model, &a.output)?;
    print_json(&model.meta)
}

fn eer(a: EerArgs) -> Result<()> {
    let scores = match (&a.scores, &a.model, &a.input) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ScoreSet::from_csv(&text)?
        }
        (None, Some(model), Some(input)) => {
            let model = backend::load_model(model)?;
            let ds = load(input, a.format)?;
            let bank = a.bank.as_deref().map(load_bank).transpose()?;
            backend::build_trials(&ds, bank.as_ref(), &model, a.seed)?
        }
        _ => return Err(Error::Config("eer needs --scores, or --model with --input".into())),
    };
    if let Some(out) = &a.scores_out {
        write_text(out, &scores.to_csv())?;
    }
    if let Some(out) = &a.det_out {
        let mut text = String::from("threshold,far,frr\n");
        for p in backend::det_points(&scores)? {
            text.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        write_text(out, &text)?;
    }
    let value = backend::compute_eer(&scores)?;
    print_json(&serde_json::json!({
        "eer": value,
        "genuine": scores.genuine.len(),
        "impostor": scores.impostor.len(),
    }))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let spec = PopulationSpec {
        m: a.m,
        between_std: Stds::Uniform(a.between_std),
        within_std: Stds::Uniform(a.within_std),
        n_speakers: a.n_speakers,
        k_samples: a.k_samples,
        seed: a.seed,
    };
    let ds = synth::generate_population(&spec)?;
    data::save(&ds, &a.output, format_for(&a.output, a.format))?;
    print_json(&summary(&ds))
}

/// `run` reads the config as a whole experiment document; flags fill in
/// whatever it leaves out.
fn run(a: RunArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &a.input {
        cfg.input = InputSpec::File {
            path: path.clone(),
            format: a.format,
        };
    }
    if let Some(v) = a.dev_fraction {
        cfg.dev_fraction = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if !a.bits.is_empty() {
        cfg.bits = a.bits.clone();
    }
    if let Some(r) = &a.representation {
        cfg.representation = parse(r)?;
    }
    if !a.measures.is_empty() {
        cfg.measures = a.measures.iter().map(|m| parse(m)).collect::<Result<_>>()?;
    }
    cfg.sweep = Sweep {
        n_speakers: a.n_speakers.clone(),
        k_samples: a.k_samples.clone(),
    };
    cfg.backend.lda_dim = a.lda_dim.or(cfg.backend.lda_dim);
    cfg.backend.speaker_dim = a.speaker_dim.or(cfg.backend.speaker_dim);
    if let Some(v) = a.iters {
        cfg.backend.iterations = v;
    }
    cfg.output_dir = a.output_dir.clone();
    let cfg = overlay(cfg, config)?;
    cfg.validate()?;
    let report = experiment::run_experiment(&cfg)?;
    if cfg.output_dir.is_none() {
        print!("{}", report.to_json());
    } else {
        for t in &report.tables {
            print!("{}\n{}", t.caption, experiment::render(t, RenderFormat::Markdown));
        }
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let table = experiment::parse_json(&text)?;
    let out = experiment::render(&table, parse(&a.format)?);
    match &a.output {
        Some(path) => write_text(path, &out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_workers()?;
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => ingest(overlay(a, cfg)?),
        Command::Split(a) => split(overlay(a, cfg)?),
        Command::QuantizeTrain(a) => quantize_train(overlay(a, cfg)?),
        Command::QuantizeApply(a) => quantize_apply(overlay(a, cfg)?),
        Command::Measure(a) => measure(overlay(a, cfg)?),
        Command::BackendTrain(a) => backend_train(overlay(a, cfg)?),
        Command::Eer(a) => eer(overlay(a, cfg)?),
        Command::Synth(a) => synth_cmd(overlay(a, cfg)?),
        Command::Run(a) => run(a, cfg),
        Command::Render(a) => render(overlay(a, cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
