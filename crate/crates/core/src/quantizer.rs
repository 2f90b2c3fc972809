//! Per-element Lloyd-Max scalar quantization.
//!
//! A [`ScalarQuantizer`] with `b` bits splits the real line into `2^b` cells
//! `(boundary[i-1], boundary[i]]` (the outer cells are unbounded) and
//! reconstructs each cell by its level. Training alternates the centroid and
//! nearest-neighbor conditions on the empirical distribution until the
//! relative drop in mean squared error falls below a tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_bits, FeatureVector, QuantizedDataset, QuantizedVector, SpeakerDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LloydMaxOptions {
    /// Stop once `(mse_prev - mse) / mse_prev < tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LloydMaxOptions {
    fn default() -> Self {
        LloydMaxOptions {
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    bits: u8,
    boundaries: Vec<f64>,
    levels: Vec<f64>,
    #[serde(default)]
    distortion: f64,
}

/// Output of [`train_lloyd_max`]: the quantizer plus its descent trace.
#[derive(Debug, Clone)]
pub struct Training {
    pub quantizer: ScalarQuantizer,
    /// MSE of the `(levels, boundaries)` pair at every iteration, starting
    /// with the initial quantizer.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl ScalarQuantizer {
    /// Builds a quantizer from reconstruction levels; boundaries are the
    /// midpoints of adjacent levels.
    pub fn from_levels(bits: u8, levels: Vec<f64>) -> Result<Self> {
        check_bits(bits)?;
        if levels.len() != 1 << bits {
            return Err(Error::Validation(format!(
                "{bits}-bit quantizer needs {} levels, got {}",
                1 << bits,
                levels.len()
            )));
        }
        let boundaries = midpoints(&levels);
        ScalarQuantizer::new(bits, boundaries, levels, 0.0)
    }

    pub fn new(bits: u8, boundaries: Vec<f64>, levels: Vec<f64>, distortion: f64) -> Result<Self> {
        check_bits(bits)?;
        let k = 1usize << bits;
        if levels.len() != k || boundaries.len() != k - 1 {
            return Err(Error::Validation(format!(
                "{bits}-bit quantizer needs {k} levels and {} boundaries",
                k - 1
            )));
        }
        if !strictly_increasing(&levels) || !strictly_increasing(&boundaries) {
            return Err(Error::Validation(
                "levels and boundaries must be finite and strictly increasing".into(),
            ));
        }
        let q = ScalarQuantizer {
            bits,
            boundaries,
            levels,
            distortion,
        };
        if let Some(i) = (0..k).find(|&i| q.cell(q.levels[i]) != i) {
            return Err(Error::Validation(format!("level {i} lies outside its cell")));
        }
        Ok(q)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Training MSE on the samples the quantizer was fit to.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// Index of the cell containing `x`; a value equal to a boundary belongs
    /// to the lower cell.
    pub fn cell(&self, x: f64) -> usize {
        self.boundaries.partition_point(|&b| b < x)
    }

    pub fn level(&self, code: usize) -> Option<f64> {
        self.levels.get(code).copied()
    }

    /// Mean squared reconstruction error over `samples`.
    pub fn mse(&self, samples: &[f64]) -> f64 {
        let total: f64 = samples
            .iter()
            .map(|&x| {
                let d = x - self.levels[self.cell(x)];
                d * d
            })
            .sum();
        total / samples.len() as f64
    }
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite()) && xs.windows(2).all(|w| w[0] < w[1])
}

fn midpoints(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Cell `i` of `sorted` is `sorted[edges[i]..edges[i + 1]]`.
fn cell_edges(sorted: &[f64], boundaries: &[f64]) -> Vec<usize> {
    let mut edges = Vec::with_capacity(boundaries.len() + 2);
    edges.push(0);
    for &b in boundaries {
        edges.push(sorted.partition_point(|&x| x <= b));
    }
    edges.push(sorted.len());
    edges
}

fn distortion(sorted: &[f64], edges: &[usize], levels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &level) in levels.iter().enumerate() {
        for &x in &sorted[edges[i]..edges[i + 1]] {
            let d = x - level;
            total += d * d;
        }
    }
    total / sorted.len() as f64
}

fn quantile_levels(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    (0..k)
        .map(|i| {
            let pos = (i as f64 + 0.5) / k as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Trains an MSE-optimal `bits`-bit quantizer on `samples`.
pub fn train_lloyd_max(samples: &[f64], bits: u8, opts: &LloydMaxOptions) -> Result<Training> {
    check_bits(bits)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to train a quantizer".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite training sample {x}")));
    }
    let k = 1usize << bits;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateInput(format!(
            "{bits}-bit quantizer needs at least {k} distinct values, got {}",
            distinct.len()
        )));
    }

    let mut levels = quantile_levels(&sorted, k);
    if !strictly_increasing(&levels) {
        levels = quantile_levels(&distinct, k);
    }
    let mut boundaries = midpoints(&levels);
    let mut edges = cell_edges(&sorted, &boundaries);
    let mut mse = distortion(&sorted, &edges, &levels);
    let mut trace = vec![mse];
    let mut converged = false;

    for _ in 0..opts.max_iter {
        let mut next = levels.clone();
        for i in 0..k {
            let cell = &sorted[edges[i]..edges[i + 1]];
            if cell.is_empty() {
                // Interior empty cells restart between their boundaries;
                // outer ones keep their level, which already lies inside.
                if i > 0 && i < k - 1 {
                    next[i] = 0.5 * (boundaries[i - 1] + boundaries[i]);
                }
            } else {
                next[i] = cell.iter().sum::<f64>() / cell.len() as f64;
            }
        }
        if !strictly_increasing(&next) {
            break;
        }
        let next_boundaries = midpoints(&next);
        let next_edges = cell_edges(&sorted, &next_boundaries);
        let next_mse = distortion(&sorted, &next_edges, &next);
        levels = next;
        boundaries = next_boundaries;
        edges = next_edges;
        let prev = mse;
        mse = next_mse;
        trace.push(mse);
        if prev <= 0.0 || (prev - mse) / prev < opts.tol {
            converged = true;
            break;
        }
    }

    let quantizer = ScalarQuantizer::new(bits, boundaries, levels, mse)?;
    Ok(Training {
        quantizer,
        trace,
        converged,
    })
}

/// How dequantized vectors are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// The code index itself, as a real.
    Codeword,
    /// The reconstruction level of the cell.
    #[default]
    QuantumValue,
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codeword" => Ok(Representation::Codeword),
            "quantum_value" | "quantum" => Ok(Representation::QuantumValue),
            other => Err(Error::Config(format!("unknown representation {other:?}"))),
        }
    }
}

/// One quantizer per feature element, all with the same bit depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerBank {
    bits: u8,
    representation: Representation,
    per_dim: Vec<ScalarQuantizer>,
}

impl QuantizerBank {
    pub fn new(per_dim: Vec<ScalarQuantizer>, representation: Representation) -> Result<Self> {
        let bits = per_dim
            .first()
            .map(ScalarQuantizer::bits)
            .ok_or_else(|| Error::EmptyInput("quantizer bank needs at least one element".into()))?;
        if per_dim.iter().any(|q| q.bits != bits) {
            return Err(Error::Validation("all quantizers in a bank must share bits".into()));
        }
        Ok(QuantizerBank {
            bits,
            representation,
            per_dim,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.per_dim.len()
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        self
    }

    pub fn quantizers(&self) -> &[ScalarQuantizer] {
        &self.per_dim
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: QuantizerBank = serde_json::from_str(text)?;
        let per_dim = raw
            .per_dim
            .into_iter()
            .map(|q| ScalarQuantizer::new(raw.bits, q.boundaries, q.levels, q.distortion))
            .collect::<Result<Vec<_>>>()?;
        QuantizerBank::new(per_dim, raw.representation)
    }
}

/// Trains one quantizer per element on every vector of `ds`. Elements are
/// trained independently, so the result does not depend on thread count.
pub fn train_bank(
    ds: &SpeakerDataset,
    bits: u8,
    representation: Representation,
    opts: &LloydMaxOptions,
) -> Result<QuantizerBank> {
    let columns: Vec<Vec<f64>> = (0..ds.dim())
        .map(|j| ds.vectors().map(|v| v[j]).collect())
        .collect();
    let per_dim = columns
        .par_iter()
        .enumerate()
        .map(|(j, col)| {
            train_lloyd_max(col, bits, opts)
                .map(|t| t.quantizer)
                .map_err(|e| match e {
                    Error::DegenerateInput(msg) => Error::DegenerateInput(format!("element {j}: {msg}")),
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizerBank::new(per_dim, representation)
}

pub fn quantize(bank: &QuantizerBank, v: &[f64]) -> Result<QuantizedVector> {
    if v.len() != bank.dim() {
        return Err(Error::dim(bank.dim(), v.len()));
    }
    let codes = bank
        .per_dim
        .iter()
        .zip(v)
        .map(|(q, &x)| q.cell(x) as u8)
        .collect();
    Ok(QuantizedVector {
        codes,
        bits: bank.bits,
    })
}

pub fn dequantize(bank: &QuantizerBank, q: &QuantizedVector) -> Result<FeatureVector> {
    dequantize_codes(bank, &q.codes)
}

fn dequantize_codes(bank: &QuantizerBank, codes: &[u8]) -> Result<FeatureVector> {
    if codes.len() != bank.dim() {
        return Err(Error::dim(bank.dim(), codes.len()));
    }
    let values = bank
        .per_dim
        .iter()
        .zip(codes)
        .map(|(q, &c)| {
            let level = q.level(c as usize).ok_or_else(|| {
                Error::OutOfRange(format!("code {c} does not fit in {} bits", bank.bits))
            })?;
            Ok(match bank.representation {
                Representation::QuantumValue => level,
                Representation::Codeword => f64::from(c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureVector::new(values)
}

pub fn quantize_dataset(bank: &QuantizerBank, ds: &SpeakerDataset) -> Result<QuantizedDataset> {
    let speakers = ds
        .speakers()
        .map(|(id, vectors)| {
            let codes = vectors
                .iter()
                .map(|v| quantize(bank, v).map(|q| q.codes))
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_owned(), codes))
        })
        .collect::<Result<_>>()?;
    QuantizedDataset::new(ds.dim(), bank.bits, speakers)
}

pub fn dequantize_dataset(bank: &QuantizerBank, qds: &QuantizedDataset) -> Result<SpeakerDataset> {
    let speakers = qds
        .speakers()
        .map(|(id, vectors)| {
            let values = vectors
                .iter()
                .map(|c| dequantize_codes(bank, c))
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_owned(), values))
        })
        .collect::<Result<_>>()?;
    SpeakerDataset::new(qds.dim(), speakers)
}

/// Quantize then reconstruct every vector.
pub fn requantize_dataset(bank: &QuantizerBank, ds: &SpeakerDataset) -> Result<SpeakerDataset> {
    Ok(dequantize_dataset(bank, &quantize_dataset(bank, ds)?)?.with_manifest(ds.manifest.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn two_point_mass_one_bit() {
        let samples: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let t = train_lloyd_max(&samples, 1, &LloydMaxOptions::default()).unwrap();
        assert_eq!(t.quantizer.levels(), &[-1.0, 1.0]);
        assert_eq!(t.quantizer.boundaries(), &[0.0]);
        assert_eq!(t.quantizer.distortion(), 0.0);
    }

    #[test]
    fn uniform_two_bits() {
        let t = train_lloyd_max(&uniform_grid(100_000), 2, &LloydMaxOptions::default()).unwrap();
        let q = &t.quantizer;
        for (b, want) in q.boundaries().iter().zip([0.25, 0.5, 0.75]) {
            assert!((b - want).abs() < 1e-3, "{:?}", q.boundaries());
        }
        for (l, want) in q.levels().iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((l - want).abs() < 1e-3, "{:?}", q.levels());
        }
    }

    #[test]
    fn degenerate_and_empty_inputs() {
        assert!(matches!(
            train_lloyd_max(&[1.0, 1.0, 2.0, 2.0], 2, &LloydMaxOptions::default()),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            train_lloyd_max(&[], 1, &LloydMaxOptions::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn exact_distinct_count_trains() {
        let samples = [0.0, 1.0, 2.0, 3.0, 3.0];
        let t = train_lloyd_max(&samples, 2, &LloydMaxOptions::default()).unwrap();
        assert_eq!(t.quantizer.levels().len(), 4);
        assert!(t.trace.last().unwrap() <= &t.trace[0]);
        assert!((t.quantizer.mse(&samples) - t.quantizer.distortion()).abs() < 1e-15);
    }

    #[test]
    fn boundary_ties_go_to_lower_cell() {
        let q = ScalarQuantizer::from_levels(1, vec![-1.0, 1.0]).unwrap();
        let bank = QuantizerBank::new(vec![q.clone(), q], Representation::QuantumValue).unwrap();
        assert_eq!(quantize(&bank, &[-3.2, 0.4]).unwrap().codes, vec![0, 1]);
        assert_eq!(quantize(&bank, &[0.0, 1e-300]).unwrap().codes, vec![0, 1]);
        assert_eq!(quantize(&bank, &[-1e300, 1e300]).unwrap().codes, vec![0, 1]);
    }

    #[test]
    fn dequantize_modes() {
        let q = ScalarQuantizer::from_levels(2, vec![0.125, 0.375, 0.625, 0.875]).unwrap();
        let bank = QuantizerBank::new(vec![q.clone(), q], Representation::QuantumValue).unwrap();
        let codes = QuantizedVector::new(vec![0, 3], 2).unwrap();
        assert_eq!(dequantize(&bank, &codes).unwrap().as_slice(), &[0.125, 0.875]);
        let bank = bank.with_representation(Representation::Codeword);
        assert_eq!(dequantize(&bank, &codes).unwrap().as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn dequantize_rejects_out_of_range() {
        let q = ScalarQuantizer::from_levels(1, vec![-1.0, 1.0]).unwrap();
        let bank = QuantizerBank::new(vec![q], Representation::QuantumValue).unwrap();
        let bad = QuantizedVector { codes: vec![2], bits: 1 };
        assert!(matches!(dequantize(&bank, &bad), Err(Error::OutOfRange(_))));
        assert!(matches!(quantize(&bank, &[0.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dequantized_distortion_matches_training_mse() {
        let mut rng = crate::rng::stream(3, 0);
        let samples: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>().powi(3)).collect();
        let t = train_lloyd_max(&samples, 3, &LloydMaxOptions::default()).unwrap();
        let bank = QuantizerBank::new(vec![t.quantizer.clone()], Representation::QuantumValue).unwrap();
        let mut direct = 0.0;
        for &x in &samples {
            let q = quantize(&bank, &[x]).unwrap();
            let y = dequantize(&bank, &q).unwrap()[0];
            direct += (x - y) * (x - y);
        }
        direct /= samples.len() as f64;
        assert!((direct - t.quantizer.distortion()).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn more_bits_never_increase_mse() {
        let mut rng = crate::rng::stream(11, 0);
        let samples: Vec<f64> = (0..5_000).map(|_| rng.gen::<f64>() * rng.gen::<f64>()).collect();
        let mses: Vec<f64> = (1..=5)
            .map(|b| train_lloyd_max(&samples, b, &LloydMaxOptions::default()).unwrap().quantizer.distortion())
            .collect();
        assert!(mses.windows(2).all(|w| w[1] <= w[0]), "{mses:?}");
    }

    #[test]
    fn symmetric_input_gives_symmetric_quantizer() {
        let half: Vec<f64> = (1..=2000).map(|i| (i as f64 / 400.0).powf(1.5)).collect();
        let samples: Vec<f64> = half.iter().flat_map(|&x| [x, -x]).collect();
        let opts = LloydMaxOptions::default();
        let q = train_lloyd_max(&samples, 3, &opts).unwrap().quantizer;
        let k = q.levels().len();
        let scale = q.levels()[k - 1];
        for i in 0..k {
            let asym = (q.levels()[i] + q.levels()[k - 1 - i]).abs();
            assert!(asym <= 10.0 * opts.tol * scale, "{:?}", q.levels());
        }
        for i in 0..k - 1 {
            let asym = (q.boundaries()[i] + q.boundaries()[k - 2 - i]).abs();
            assert!(asym <= 10.0 * opts.tol * scale, "{:?}", q.boundaries());
        }
    }

    #[test]
    fn bank_json_round_trip() {
        let q = ScalarQuantizer::from_levels(1, vec![-0.5, 2.0]).unwrap();
        let bank = QuantizerBank::new(vec![q], Representation::Codeword).unwrap();
        let json = bank.to_json().unwrap();
        assert!(json.contains("\"representation\": \"codeword\""));
        assert!(json.contains("\"per_dim\""));
        assert_eq!(QuantizerBank::from_json(&json).unwrap(), bank);
    }

    proptest! {
        #[test]
        fn lloyd_trace_is_non_increasing(
            samples in proptest::collection::vec(-100.0f64..100.0, 16..400),
            bits in 1u8..4,
        ) {
            if let Ok(t) = train_lloyd_max(&samples, bits, &LloydMaxOptions::default()) {
                for w in t.trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", t.trace);
                }
                let q = &t.quantizer;
                for (i, &b) in q.boundaries().iter().enumerate() {
                    prop_assert!((b - 0.5 * (q.levels()[i] + q.levels()[i + 1])).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn quantize_is_monotone_and_idempotent(
            levels in proptest::collection::btree_set(-1000i32..1000, 4),
            x in -2000.0f64..2000.0,
            y in -2000.0f64..2000.0,
        ) {
            let levels: Vec<f64> = levels.into_iter().map(f64::from).collect();
            let q = ScalarQuantizer::from_levels(2, levels).unwrap();
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(q.cell(lo) <= q.cell(hi));
            let bank = QuantizerBank::new(vec![q], Representation::QuantumValue).unwrap();
            let code = quantize(&bank, &[x]).unwrap();
            let back = dequantize(&bank, &code).unwrap();
            prop_assert_eq!(quantize(&bank, &back).unwrap(), code);
        }
    }
}
