//! Declarative experiment runner: split, per-bits quantizer training,
//! measurement over a sweep of (speakers, samples) cells and report tables.

pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{build_trials, compute_eer, fit_backend, BackendOptions, ScoreSet};
use crate::baseline::{adler_information, hamming_dof, score_space_kl, AdlerOptions, Pairing};
use crate::data::{self, split_by_speaker, subsample, Format, SpeakerDataset};
use crate::entropy::{mutual_information, UniquenessEstimate};
use crate::error::{Error, Result};
use crate::quantizer::{
    quantize_dataset, requantize_dataset, train_bank, LloydMaxOptions, QuantizerBank, Representation,
};
use crate::synth::{generate_population, PopulationSpec};

pub use report::{parse_json, render, Cell, RenderFormat, ReportTable, Row, MISSING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    MutualInfo,
    Daugman,
    Adler,
    ScoreKl,
    Eer,
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::Config(format!("unknown measure {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Synthetic(PopulationSpec),
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<Format>,
    },
}

impl InputSpec {
    pub fn load(&self) -> Result<SpeakerDataset> {
        match self {
            InputSpec::Synthetic(spec) => generate_population(spec),
            InputSpec::File { path, format } => {
                data::load(path, format.unwrap_or_else(|| Format::from_path(path)))
            }
        }
    }
}

/// Sweep axes. An empty list means "everything available": all measurement
/// speakers owning at least `k` vectors, or the smallest per-speaker count.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub n_speakers: Vec<usize>,
    pub k_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: InputSpec,
    /// Share of speakers used to train quantizers and the backend.
    pub dev_fraction: f64,
    pub seed: u64,
    pub bits: Vec<u8>,
    pub representation: Representation,
    pub sweep: Sweep,
    pub measures: Vec<Measure>,
    pub quantizer: LloydMaxOptions,
    pub pairing: Pairing,
    pub adler: AdlerOptions,
    pub score_kl_bins: usize,
    pub backend: BackendOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: InputSpec::Synthetic(PopulationSpec::standard()),
            dev_fraction: 0.5,
            seed: 0,
            bits: vec![1, 2, 3, 4, 5],
            representation: Representation::default(),
            sweep: Sweep::default(),
            measures: vec![Measure::MutualInfo],
            quantizer: LloydMaxOptions::default(),
            pairing: Pairing::default(),
            adler: AdlerOptions::default(),
            score_kl_bins: 50,
            backend: BackendOptions::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measures.is_empty() {
            return Err(Error::Config("measure set is empty".into()));
        }
        if let Some(b) = self.bits.iter().find(|b| !(1..=8).contains(*b)) {
            return Err(Error::Config(format!("bits must lie in 1..=8, got {b}")));
        }
        if self.bits.is_empty() && self.measures.iter().any(|m| matches!(m, Measure::MutualInfo)) {
            return Err(Error::Config("mutual_info needs at least one bits value".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!("dev_fraction must lie in (0, 1), got {}", self.dev_fraction)));
        }
        if self.sweep.n_speakers.contains(&0) || self.sweep.k_samples.contains(&0) {
            return Err(Error::Config("sweep values must be >= 1".into()));
        }
        if self.score_kl_bins == 0 {
            return Err(Error::Config("score_kl_bins must be >= 1".into()));
        }
        if let InputSpec::Synthetic(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }

    fn wants(&self, m: Measure) -> bool {
        self.measures.contains(&m)
    }

    fn sorted_bits(&self) -> Vec<u8> {
        let mut bits = self.bits.clone();
        bits.sort_unstable();
        bits.dedup();
        bits
    }
}

/// A cell that failed for a reason other than insufficient data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub table: String,
    pub row: String,
    pub column: String,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dev_speakers: usize,
    pub measure_speakers: usize,
    pub tables: Vec<ReportTable>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    pub fn table(&self, name: &str) -> Option<&ReportTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Writes `report.json`, one `.md`, `.csv` and `.json` per table, and
    /// `failures.json` when any cell failed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: String, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        put("report.json".into(), self.to_json())?;
        for t in &self.tables {
            for f in [RenderFormat::Markdown, RenderFormat::Csv, RenderFormat::Json] {
                put(format!("{}.{}", t.name, f.extension()), render(t, f))?;
            }
        }
        if !self.failures.is_empty() {
            let text = serde_json::to_string_pretty(&self.failures)? + "\n";
            put("failures.json".into(), text)?;
        }
        Ok(())
    }
}

/// One coordinate of the sweep, resolved against the measurement data.
#[derive(Debug, Clone)]
struct SweepCell {
    label: String,
    n: Option<usize>,
    k: usize,
    data: Option<SpeakerDataset>,
}

fn resolve_sweep(cfg: &ExperimentConfig, measure: &SpeakerDataset) -> Result<Vec<SweepCell>> {
    let min_k = measure.speakers().map(|(_, v)| v.len()).min().unwrap_or(0);
    let ks = if cfg.sweep.k_samples.is_empty() { vec![min_k] } else { cfg.sweep.k_samples.clone() };
    let mut cells = Vec::new();
    for &k in &ks {
        let available = measure.speakers().filter(|(_, v)| v.len() >= k).count();
        let ns: Vec<usize> = if cfg.sweep.n_speakers.is_empty() { vec![available] } else { cfg.sweep.n_speakers.clone() };
        for n in ns {
            let data = if n == 0 || k == 0 {
                None
            } else {
                match subsample(measure, n, k, cfg.seed) {
                    Ok(ds) => Some(ds),
                    Err(Error::InsufficientData(_)) => None,
                    Err(e) => return Err(e.in_cell(format!("sweep cell k={k} n={n}"))),
                }
            };
            cells.push(SweepCell {
                label: format!("{k} ({n})"),
                n: Some(n),
                k,
                data,
            });
        }
    }
    Ok(cells)
}

struct Collector {
    failures: Vec<CellFailure>,
}

impl Collector {
    /// Insufficient data renders as a missing cell; other errors are
    /// recorded as failures.
    fn cell(&mut self, table: &str, row: &str, column: &str, result: Result<Option<f64>>) -> Option<f64> {
        match result {
            Ok(v) => v,
            Err(Error::InsufficientData(_)) => None,
            Err(e) => {
                self.failures.push(CellFailure {
                    table: table.into(),
                    row: row.into(),
                    column: column.into(),
                    error: e.to_string(),
                    exit_code: e.exit_code(),
                });
                None
            }
        }
    }
}

fn bits_label(bits: Option<u8>) -> String {
    bits.map_or_else(|| "float".to_string(), |b| b.to_string())
}

/// Runs the configured experiment. Output files are written when
/// `output_dir` is set, including partial results when a cell fails; in that
/// case the first failure is returned as an error after writing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let full = cfg.input.load()?;
    let (dev, measure) = split_by_speaker(&full, cfg.dev_fraction, cfg.seed)?;
    let bits = cfg.sorted_bits();

    let mut bank_bits = bits.clone();
    if cfg.wants(Measure::Daugman) && !bank_bits.contains(&1) {
        bank_bits.insert(0, 1);
    }
    let banks: BTreeMap<u8, QuantizerBank> = bank_bits
        .iter()
        .map(|&b| {
            train_bank(&dev, b, cfg.representation, &cfg.quantizer)
                .map(|bank| (b, bank))
                .map_err(|e| e.in_cell(format!("quantizer training, bits={b}")))
        })
        .collect::<Result<_>>()?;

    let sweep = resolve_sweep(cfg, &measure)?;
    let columns: Vec<String> = sweep.iter().map(|c| c.label.clone()).collect();
    let mut out = Collector { failures: Vec::new() };
    let mut tables = Vec::new();

    let cell_of = |bits: Option<u8>, c: &SweepCell, value: Option<f64>| Cell {
        value,
        bits,
        n_speakers: c.n,
        k_samples: Some(c.k),
        seed: cfg.seed,
    };

    if cfg.wants(Measure::MutualInfo) {
        let grid: Vec<Vec<Result<Option<UniquenessEstimate>>>> = bits
            .par_iter()
            .map(|b| {
                sweep
                    .par_iter()
                    .map(|c| match &c.data {
                        None => Ok(None),
                        Some(ds) => quantize_dataset(&banks[b], ds).and_then(|q| mutual_information(&q)).map(Some),
                    })
                    .collect()
            })
            .collect();
        let mut mi = ReportTable::new(
            "mutual_info",
            "Speaker mutual information I(S;V) by samples per speaker (speakers)",
            "bits",
            "bits",
            columns.clone(),
        );
        let mut terms = ReportTable::new(
            "entropy_terms",
            "Entropy decomposition H(V), H(V|S), I(S;V)",
            "bits",
            "setting",
            vec!["H(V)".into(), "H(V|S)".into(), "I(S;V)".into()],
        );
        for (b, row) in bits.iter().zip(grid) {
            let mut cells = Vec::new();
            for (c, r) in sweep.iter().zip(row) {
                let est = match r {
                    Ok(e) => e,
                    Err(e) => {
                        out.cell("mutual_info", &b.to_string(), &c.label, Err(e));
                        None
                    }
                };
                cells.push(cell_of(Some(*b), c, est.as_ref().map(|e| e.i_bits)));
                let values = match &est {
                    Some(e) => [Some(e.h_population), Some(e.h_within), Some(e.i_bits)],
                    None => [None; 3],
                };
                terms.push_row(
                    format!("b={b} k={} n={}", c.k, c.n.unwrap_or(0)),
                    values.iter().map(|v| cell_of(Some(*b), c, *v)).collect(),
                )?;
            }
            mi.push_row(b.to_string(), cells)?;
        }
        tables.push(mi);
        tables.push(terms);
    }

    if cfg.wants(Measure::Daugman) {
        let results: Vec<Result<Option<f64>>> = sweep
            .par_iter()
            .map(|c| match &c.data {
                None => Ok(None),
                Some(ds) => quantize_dataset(&banks[&1], ds)
                    .and_then(|q| hamming_dof(&q, cfg.pairing))
                    .map(|d| Some(d.dof)),
            })
            .collect();
        let mut t = ReportTable::new(
            "daugman",
            "Degrees of freedom of 1-bit Hamming distances",
            "degrees of freedom",
            "bits",
            columns.clone(),
        );
        let cells = sweep
            .iter()
            .zip(results)
            .map(|(c, r)| {
                let v = out.cell("daugman", "1", &c.label, r);
                cell_of(Some(1), c, v)
            })
            .collect();
        t.push_row("1", cells)?;
        tables.push(t);
    }

    let settings: Vec<Option<u8>> = std::iter::once(None).chain(bits.iter().map(|&b| Some(b))).collect();

    if cfg.wants(Measure::Adler) {
        let grid: Vec<Vec<Result<Option<f64>>>> = settings
            .par_iter()
            .map(|setting| {
                sweep
                    .par_iter()
                    .map(|c| {
                        let Some(ds) = &c.data else { return Ok(None) };
                        let ds = match setting {
                            Some(b) => requantize_dataset(&banks[b], ds)?,
                            None => ds.clone(),
                        };
                        adler_information(&ds, &cfg.adler).map(|a| Some(a.bits))
                    })
                    .collect()
            })
            .collect();
        let mut t = ReportTable::new(
            "adler",
            "Gaussian relative entropy of speaker to population",
            "bits",
            "bits",
            columns.clone(),
        );
        for (setting, row) in settings.iter().zip(grid) {
            let label = bits_label(*setting);
            let cells = sweep
                .iter()
                .zip(row)
                .map(|(c, r)| {
                    let v = out.cell("adler", &label, &c.label, r);
                    cell_of(*setting, c, v)
                })
                .collect();
            t.push_row(label, cells)?;
        }
        tables.push(t);
    }

    if cfg.wants(Measure::Eer) || cfg.wants(Measure::ScoreKl) {
        let scores: Vec<Result<ScoreSet>> = settings
            .par_iter()
            .map(|setting| {
                let bank = setting.map(|b| &banks[&b]);
                let dev_data = match bank {
                    Some(bank) => requantize_dataset(bank, &dev)?,
                    None => dev.clone(),
                };
                let model = fit_backend(&dev_data, &cfg.backend)?;
                build_trials(&measure, bank, &model, cfg.seed)
            })
            .collect();
        let n_measure = measure.n_speakers();
        let column = format!("all ({n_measure})");
        let mk = |setting: Option<u8>, value: Option<f64>| Cell {
            value,
            bits: setting,
            n_speakers: Some(n_measure),
            k_samples: None,
            seed: cfg.seed,
        };
        let mut eer = ReportTable::new(
            "eer",
            "Equal error rate with the backend refit per quantization setting",
            "%",
            "bits",
            vec![column.clone()],
        );
        let mut kl = ReportTable::new(
            "score_kl",
            "KL divergence between genuine and impostor score histograms",
            "bits",
            "bits",
            vec![column.clone()],
        );
        for (setting, result) in settings.iter().zip(&scores) {
            let label = bits_label(*setting);
            let (e, k) = match result {
                Ok(s) => (
                    compute_eer(s).map(|v| Some(100.0 * v)),
                    score_space_kl(&s.genuine, &s.impostor, cfg.score_kl_bins).map(Some),
                ),
                Err(err) => (Err(clone_error(err)), Err(clone_error(err))),
            };
            if cfg.wants(Measure::Eer) {
                let v = out.cell("eer", &label, &column, e);
                eer.push_row(label.clone(), vec![mk(*setting, v)])?;
            }
            if cfg.wants(Measure::ScoreKl) {
                let v = out.cell("score_kl", &label, &column, k);
                kl.push_row(label, vec![mk(*setting, v)])?;
            }
        }
        if cfg.wants(Measure::Eer) {
            tables.push(eer);
        }
        if cfg.wants(Measure::ScoreKl) {
            tables.push(kl);
        }
    }

    let report = ExperimentReport {
        config: cfg.clone(),
        dev_speakers: dev.n_speakers(),
        measure_speakers: measure.n_speakers(),
        tables,
        failures: out.failures,
    };
    if let Some(dir) = &cfg.output_dir {
        report.write(dir)?;
    }
    if let Some(f) = report.failures.first() {
        return Err(Error::Cell {
            cell: format!("table {} row {} column {}", f.table, f.row, f.column),
            source: Box::new(match f.exit_code {
                2 => Error::Config(f.error.clone()),
                4 => Error::Numerical(f.error.clone()),
                _ => Error::Validation(f.error.clone()),
            }),
        });
    }
    Ok(report)
}

/// Errors are not `Clone`; keep the class (for the exit code) and message.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::InsufficientData(m) => Error::InsufficientData(m.clone()),
        Error::Config(m) => Error::Config(m.clone()),
        Error::Numerical(m) | Error::DegenerateInput(m) => Error::Numerical(m.clone()),
        other => Error::Validation(other.to_string()),
    }
}
