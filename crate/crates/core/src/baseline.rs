//! Comparison measures of biometric information.
//!
//! * [`hamming_dof`]: degrees of freedom of the normalized Hamming distance
//!   distribution of binarized templates, `N = p(1-p)/σ²`.
//! * [`adler_information`]: average relative entropy between per-speaker and
//!   population Gaussians.
//! * [`score_space_kl`]: relative entropy between genuine and impostor score
//!   histograms.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{QuantizedDataset, SpeakerDataset};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Only pairs of vectors from different speakers.
    #[default]
    BetweenSpeaker,
    AllPairs,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "between_speaker" => Ok(Pairing::BetweenSpeaker),
            "all_pairs" => Ok(Pairing::AllPairs),
            other => Err(Error::Config(format!("unknown pairing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofEstimate {
    /// Mean normalized Hamming distance.
    pub p_hat: f64,
    /// Unbiased variance of the normalized distances.
    pub sigma2_hat: f64,
    pub dof: f64,
    pub n_pairs: u64,
}

impl DofEstimate {
    pub fn from_moments(p_hat: f64, sigma2_hat: f64, n_pairs: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_hat) {
            return Err(Error::OutOfRange(format!("mean distance {p_hat} outside [0, 1]")));
        }
        if !(sigma2_hat > 0.0) {
            return Err(Error::DegenerateInput(
                "Hamming distances have zero variance".into(),
            ));
        }
        Ok(DofEstimate {
            p_hat,
            sigma2_hat,
            dof: p_hat * (1.0 - p_hat) / sigma2_hat,
            n_pairs,
        })
    }
}

fn pack(bits: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// Degrees of freedom of pairwise normalized Hamming distances between
/// binary vectors. `groups[i]` is the speaker of `vectors[i]`.
pub fn hamming_dof_vectors(vectors: &[Vec<u8>], groups: &[usize], pairing: Pairing) -> Result<DofEstimate> {
    if vectors.len() != groups.len() {
        return Err(Error::dim(vectors.len(), groups.len()));
    }
    let len = vectors.first().map(Vec::len).unwrap_or(0);
    if len == 0 {
        return Err(Error::EmptyInput("no binary vectors".into()));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != len) {
        return Err(Error::dim(len, v.len()));
    }
    if vectors.iter().flatten().any(|&b| b > 1) {
        return Err(Error::OutOfRange("Hamming measure needs 1-bit codes".into()));
    }
    let packed: Vec<Vec<u64>> = vectors.iter().map(|v| pack(v)).collect();

    // Per-row integer partial sums: (pairs, Σd, Σd²). Integer arithmetic
    // makes the reduction exact regardless of scheduling.
    let partials: Vec<(u64, u64, u128)> = (0..packed.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = (0u64, 0u64, 0u128);
            for j in i + 1..packed.len() {
                if pairing == Pairing::BetweenSpeaker && groups[i] == groups[j] {
                    continue;
                }
                let d: u64 = packed[i]
                    .iter()
                    .zip(&packed[j])
                    .map(|(a, b)| u64::from((a ^ b).count_ones()))
                    .sum();
                acc.0 += 1;
                acc.1 += d;
                acc.2 += u128::from(d * d);
            }
            acc
        })
        .collect();
    let (pairs, sum, sum_sq) = partials
        .iter()
        .fold((0u64, 0u64, 0u128), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    if pairs < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 comparisons, have {pairs}"
        )));
    }
    let n = len as f64;
    let p = pairs as f64;
    let p_hat = sum as f64 / (p * n);
    // P·Σd² − (Σd)² is exact in i128.
    let centered = (pairs as i128) * (sum_sq as i128) - (sum as i128) * (sum as i128);
    let sigma2_hat = centered as f64 / (p * (p - 1.0) * n * n);
    DofEstimate::from_moments(p_hat, sigma2_hat, pairs)
}

/// [`hamming_dof_vectors`] on a 1-bit quantized dataset.
pub fn hamming_dof(qds: &QuantizedDataset, pairing: Pairing) -> Result<DofEstimate> {
    if qds.bits() != 1 {
        return Err(Error::OutOfRange(format!(
            "Hamming measure needs 1-bit quantization, got {} bits",
            qds.bits()
        )));
    }
    if pairing == Pairing::BetweenSpeaker && qds.n_speakers() < 2 {
        return Err(Error::InsufficientData("between-speaker pairing needs 2 speakers".into()));
    }
    let mut vectors = Vec::with_capacity(qds.n_vectors());
    let mut groups = Vec::with_capacity(qds.n_vectors());
    for (s, (_, vs)) in qds.speakers().enumerate() {
        for v in vs {
            vectors.push(v.clone());
            groups.push(s);
        }
    }
    hamming_dof_vectors(&vectors, &groups, pairing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyTransform {
    /// `x -> x ‖ x`.
    DuplicateHalves,
    /// `x -> x ‖ (x[..N/2] XOR x[N/2..])`.
    XorAppend,
}

/// Adds structured redundancy to binary vectors of even length.
pub fn structured_dependency_transform(vectors: &[Vec<u8>], kind: DependencyTransform) -> Result<Vec<Vec<u8>>> {
    vectors
        .iter()
        .map(|v| {
            if v.len() % 2 != 0 {
                return Err(Error::Validation(format!(
                    "dependency transforms need even length, got {}",
                    v.len()
                )));
            }
            let mut out = v.clone();
            match kind {
                DependencyTransform::DuplicateHalves => out.extend_from_slice(v),
                DependencyTransform::XorAppend => {
                    let (a, b) = v.split_at(v.len() / 2);
                    out.extend(a.iter().zip(b).map(|(x, y)| x ^ y));
                }
            }
            Ok(out)
        })
        .collect()
}

/// Multivariate normal with a positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if covariance.shape() != (m, m) {
            return Err(Error::dim(m, covariance.nrows()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-10 * covariance.amax().max(1.0) {
            return Err(Error::Validation(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        linalg::cholesky(&covariance, "covariance")?;
        Ok(GaussianModel { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `D(p‖q)` between Gaussians, in bits.
pub fn kl_gaussian(p: &GaussianModel, q: &GaussianModel) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dim(q.dim(), p.dim()));
    }
    let m = p.dim() as f64;
    let chol_q = linalg::cholesky(&q.covariance, "q covariance")?;
    let chol_p = linalg::cholesky(&p.covariance, "p covariance")?;
    let trace = chol_q.solve(&p.covariance).trace();
    let diff = &q.mean - &p.mean;
    let maha = diff.dot(&chol_q.solve(&diff));
    let nats = 0.5 * (trace + maha - m + linalg::log_det_chol(&chol_q) - linalg::log_det_chol(&chol_p));
    Ok(nats.max(0.0) / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdlerOptions {
    /// Weight of the population covariance in each speaker's covariance.
    pub shrinkage: f64,
    /// Diagonal ridge; `None` uses `1e-6 · trace(Σ_pop) / m`.
    pub ridge: Option<f64>,
}

impl Default for AdlerOptions {
    fn default() -> Self {
        AdlerOptions {
            shrinkage: 0.5,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdlerEstimate {
    pub bits: f64,
    pub shrinkage: f64,
    pub ridge: f64,
    pub n_speakers: usize,
}

/// Average over speakers of `D(speaker ‖ population)` under Gaussian fits,
/// with speaker covariances `(1-λ)Σ_s + λΣ_pop + εI`.
pub fn adler_information(ds: &SpeakerDataset, opts: &AdlerOptions) -> Result<AdlerEstimate> {
    let lambda = opts.shrinkage;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("shrinkage must lie in [0, 1], got {lambda}")));
    }
    if ds.n_speakers() < 2 {
        return Err(Error::InsufficientData("relative entropy needs at least 2 speakers".into()));
    }
    if let Some((id, _)) = ds.speakers().find(|(_, v)| v.len() < 2) {
        return Err(Error::InsufficientData(format!("speaker {id:?} has fewer than 2 vectors")));
    }
    let m = ds.dim();
    let (pop_mean, pop_cov, _) = linalg::mean_cov(ds.vectors().map(|v| v.as_slice()), m);
    let ridge = match opts.ridge {
        Some(r) if r >= 0.0 => r,
        Some(r) => return Err(Error::Config(format!("ridge must be non-negative, got {r}"))),
        None => 1e-6 * pop_cov.trace() / m as f64,
    };
    let eye = DMatrix::<f64>::identity(m, m);
    let population = GaussianModel::new(pop_mean, linalg::symmetrize(&(&pop_cov + &eye * ridge)))
        .map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "population {msg}; increase the ridge"
            )),
            other => other,
        })?;

    let speakers: Vec<_> = ds.speakers().collect();
    let per_speaker = speakers
        .par_iter()
        .map(|(id, vectors)| {
            let (mean, cov, _) = linalg::mean_cov(vectors.iter().map(|v| v.as_slice()), m);
            let reg = &cov * (1.0 - lambda) + &pop_cov * lambda + &eye * ridge;
            let model = GaussianModel::new(mean, linalg::symmetrize(&reg)).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("speaker {id:?}: {msg}")),
                other => other,
            })?;
            kl_gaussian(&model, &population)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AdlerEstimate {
        bits: per_speaker.iter().sum::<f64>() / per_speaker.len() as f64,
        shrinkage: lambda,
        ridge,
        n_speakers: per_speaker.len(),
    })
}

/// Smoothed histogram distribution over `[lo, hi]`.
fn smoothed_histogram(scores: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_bins];
    let width = hi - lo;
    for &s in scores {
        let bin = if width > 0.0 {
            (((s - lo) / width * n_bins as f64).floor() as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[bin] += 1.0;
    }
    let total = scores.len() as f64;
    let eps = 1.0 / (10.0 * total);
    let mut probs: Vec<f64> = counts.iter().map(|c| c / total + eps).collect();
    let norm: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= norm);
    probs
}

/// Discrete `D(genuine ‖ impostor)` in bits between score histograms that
/// share `n_bins` equal-width bins over the pooled score range.
pub fn score_space_kl(genuine: &[f64], impostor: &[f64], n_bins: usize) -> Result<f64> {
    if genuine.len() < 2 || impostor.len() < 2 {
        return Err(Error::InsufficientData(
            "score relative entropy needs at least 2 scores of each kind".into(),
        ));
    }
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite score".into()));
    }
    let (lo, hi) = genuine
        .iter()
        .chain(impostor)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let p = smoothed_histogram(genuine, lo, hi, n_bins);
    let q = smoothed_histogram(impostor, lo, hi, n_bins);
    Ok(p.iter().zip(&q).map(|(&a, &b)| a * (a / b).log2()).sum::<f64>().max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid_bits(n: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = crate::rng::stream(seed, 0);
        (0..n).map(|_| (0..len).map(|_| rng.gen_range(0..2u8)).collect()).collect()
    }

    #[test]
    fn dof_fixture_from_moments() {
        let est = DofEstimate::from_moments(0.5, 0.25 / 249.0, 0).unwrap();
        assert!((est.dof - 249.0).abs() < 1e-9, "{}", est.dof);
        let est = DofEstimate::from_moments(0.5, 0.25, 0).unwrap();
        assert_eq!(est.dof, 1.0);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let v = vec![vec![0, 1], vec![1, 0], vec![0, 1]];
        // distances 2, 0, 2: variance > 0
        assert!(hamming_dof_vectors(&v, &[0, 1, 2], Pairing::AllPairs).is_ok());
        let v = vec![vec![0, 0], vec![1, 1]];
        assert!(matches!(
            hamming_dof_vectors(&v, &[0, 1], Pairing::AllPairs),
            Err(Error::InsufficientData(_))
        ));
        let v = vec![vec![0, 0], vec![0, 0], vec![1, 1], vec![1, 1]];
        assert!(matches!(
            hamming_dof_vectors(&v, &[0, 0, 1, 1], Pairing::BetweenSpeaker),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn hamming_moments_match_direct_computation() {
        let v = iid_bits(30, 70, 1);
        let groups: Vec<usize> = (0..30).map(|i| i / 3).collect();
        let est = hamming_dof_vectors(&v, &groups, Pairing::BetweenSpeaker).unwrap();
        let mut d = Vec::new();
        for i in 0..30 {
            for j in i + 1..30 {
                if groups[i] != groups[j] {
                    d.push(v[i].iter().zip(&v[j]).filter(|(a, b)| a != b).count() as f64 / 70.0);
                }
            }
        }
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert_eq!(est.n_pairs, d.len() as u64);
        assert!((est.p_hat - mean).abs() < 1e-12);
        assert!((est.sigma2_hat - var).abs() < 1e-12);
    }

    #[test]
    fn one_bit_vectors_give_binary_distances() {
        let v = iid_bits(200, 1, 2);
        let groups: Vec<usize> = (0..200).collect();
        let est = hamming_dof_vectors(&v, &groups, Pairing::AllPairs).unwrap();
        assert!((est.dof - 1.0).abs() < 0.05, "{}", est.dof);
    }

    #[test]
    fn transforms() {
        let dup = structured_dependency_transform(&[vec![1, 0]], DependencyTransform::DuplicateHalves).unwrap();
        assert_eq!(dup, vec![vec![1, 0, 1, 0]]);
        let xor = structured_dependency_transform(&[vec![1, 0, 1, 1]], DependencyTransform::XorAppend).unwrap();
        assert_eq!(xor, vec![vec![1, 0, 1, 1, 0, 1]]);
        assert!(matches!(
            structured_dependency_transform(&[vec![1, 0, 1]], DependencyTransform::XorAppend),
            Err(Error::Validation(_))
        ));
    }

    fn gauss(mean: &[f64], cov: &[f64]) -> GaussianModel {
        let m = mean.len();
        GaussianModel::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(m, m, cov)).unwrap()
    }

    #[test]
    fn kl_fixtures() {
        let p = gauss(&[1.0], &[1.0]);
        let q = gauss(&[0.0], &[1.0]);
        assert_eq!(kl_gaussian(&q, &q).unwrap(), 0.0);
        assert!((kl_gaussian(&p, &q).unwrap() - 0.5 / std::f64::consts::LN_2).abs() < 1e-12);
        let p = gauss(&[0.0, 0.0], &[2.0, 0.0, 0.0, 2.0]);
        let q = gauss(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let want = (1.0 - std::f64::consts::LN_2) / std::f64::consts::LN_2;
        assert!((kl_gaussian(&p, &q).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn gaussian_model_validation() {
        let bad = GaussianModel::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        match bad {
            Err(Error::Numerical(msg)) => assert!(msg.contains("-1"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let asym = GaussianModel::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!(matches!(asym, Err(Error::Validation(_))));
    }

    fn two_speaker_1d(offset: f64) -> SpeakerDataset {
        let mut records = Vec::new();
        for (s, mu) in [("a", -offset), ("b", offset)] {
            for x in [-1.0, 0.0, 1.0, 0.5, -0.5] {
                records.push((s, vec![mu + x]));
            }
        }
        SpeakerDataset::from_records(1, records).unwrap()
    }

    #[test]
    fn adler_zero_when_speakers_match_population() {
        let ds = two_speaker_1d(0.0);
        let est = adler_information(&ds, &AdlerOptions { shrinkage: 1.0, ridge: Some(0.0) }).unwrap();
        assert!(est.bits.abs() < 1e-12, "{}", est.bits);
    }

    #[test]
    fn adler_two_speakers_closed_form() {
        // Exact-model closed form: speakers N(±1, 1) against N(0, 2).
        let p = gauss(&[1.0], &[1.0]);
        let q = gauss(&[0.0], &[2.0]);
        let want = 0.5 * (0.5 + 0.5 - 1.0 - (0.5f64).ln()) / std::f64::consts::LN_2;
        assert!((kl_gaussian(&p, &q).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5).abs() < 1e-12);

        // Sampled version: large speakers drawn from the same models.
        let mut rng = crate::rng::stream(4, 0);
        let mut records = Vec::new();
        for (s, mu) in [("a", -1.0), ("b", 1.0)] {
            for _ in 0..200_000 {
                let z: f64 = StandardNormal.sample(&mut rng);
                records.push((s, vec![mu + z]));
            }
        }
        let ds = SpeakerDataset::from_records(1, records).unwrap();
        let est = adler_information(&ds, &AdlerOptions { shrinkage: 0.0, ridge: Some(0.0) }).unwrap();
        assert!((est.bits - 0.5).abs() < 0.025, "{}", est.bits);
    }

    #[test]
    fn adler_monotone_in_shrinkage() {
        let mut rng = crate::rng::stream(9, 0);
        let mut records = Vec::new();
        for s in 0..20 {
            let mu: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 2.0).collect();
            let scale = 0.2 + rng.gen::<f64>();
            for _ in 0..15 {
                let v = mu.iter().map(|m| m + scale * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>();
                records.push((format!("s{s}"), v));
            }
        }
        let ds = SpeakerDataset::from_records(3, records).unwrap();
        let values: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&l| adler_information(&ds, &AdlerOptions { shrinkage: l, ridge: None }).unwrap().bits)
            .collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    }

    #[test]
    fn adler_preconditions() {
        let ds = SpeakerDataset::from_records(1, vec![("a", vec![1.0]), ("a", vec![2.0]), ("b", vec![3.0])]).unwrap();
        assert!(matches!(adler_information(&ds, &AdlerOptions::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn score_kl_identical_is_near_zero() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        assert!(score_space_kl(&s, &s, 20).unwrap() < 1e-12);
    }

    #[test]
    fn score_kl_separated_supports() {
        let g: Vec<f64> = (0..50).map(|i| 10.0 + i as f64 * 0.01).collect();
        let imp: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        for bins in [2, 4, 16, 64] {
            let kl = score_space_kl(&g, &imp, bins).unwrap();
            assert!(kl.is_finite() && kl > 5.0, "{bins}: {kl}");
        }
        // Point masses: KL = log2((1+ε)/ε) / (1+Kε) with ε = 1/(10N).
        let eps: f64 = 1.0 / 500.0;
        for bins in [2usize, 8, 64] {
            let kl = score_space_kl(&[1.0; 50], &[0.0; 50], bins).unwrap();
            let want = ((1.0 + eps) / eps).log2() / (1.0 + bins as f64 * eps);
            assert!((kl - want).abs() < 1e-9, "{bins}: {kl} vs {want}");
        }
    }

    #[test]
    fn score_kl_gaussian_shift() {
        let mut rng = crate::rng::stream(12, 0);
        let g: Vec<f64> = (0..100_000).map(|_| 1.0 + { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let imp: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let kl = score_space_kl(&g, &imp, 64).unwrap();
        assert!((kl - 0.72135).abs() < 0.072, "{kl}");
    }

    #[test]
    fn score_kl_preconditions() {
        assert!(score_space_kl(&[1.0], &[1.0, 2.0], 4).is_err());
        assert!(score_space_kl(&[1.0, 2.0], &[1.0, 2.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn hamming_dof_permutation_invariant(seed in any::<u64>(), shift in 1usize..31) {
            let v = iid_bits(40, 32, seed);
            let groups: Vec<usize> = (0..40).map(|i| i / 4).collect();
            let perm: Vec<Vec<u8>> = v.iter().map(|x| {
                let mut y = x.clone();
                y.rotate_left(shift);
                y.swap(0, 5);
                y
            }).collect();
            let a = hamming_dof_vectors(&v, &groups, Pairing::BetweenSpeaker).unwrap();
            let b = hamming_dof_vectors(&perm, &groups, Pairing::BetweenSpeaker).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn kl_nonnegative_and_affine_invariant(seed in any::<u64>(), m in 1usize..5) {
            let mut rng = crate::rng::stream(seed, 0);
            let random_pd = |rng: &mut crate::rng::Rng| {
                let a = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() - 0.5);
                &a * a.transpose() + DMatrix::identity(m, m) * 0.1
            };
            let p = GaussianModel::new(DVector::from_fn(m, |_, _| rng.gen::<f64>()), random_pd(&mut rng)).unwrap();
            let q = GaussianModel::new(DVector::from_fn(m, |_, _| rng.gen::<f64>()), random_pd(&mut rng)).unwrap();
            let kl = kl_gaussian(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            let a = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() - 0.5) + DMatrix::identity(m, m) * 3.0;
            let b = DVector::from_fn(m, |_, _| rng.gen::<f64>() * 3.0);
            let map = |g: &GaussianModel| {
                GaussianModel::new(&a * g.mean() + &b, linalg::symmetrize(&(&a * g.covariance() * a.transpose()))).unwrap()
            };
            let kl2 = kl_gaussian(&map(&p), &map(&q)).unwrap();
            prop_assert!((kl - kl2).abs() < 1e-6 * kl.max(1.0), "{} {}", kl, kl2);
        }
    }
}
