//! Synthetic speaker populations with known structure, and independent
//! oracles for the estimators.
//!
//! Generators draw from per-speaker ChaCha20 streams keyed by
//! `(seed, speaker index)` and produce normal variates by inverting the
//! normal CDF, so output is bit-reproducible and independent of scheduling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{FeatureVector, QuantizedDataset, SpeakerDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::quantizer::ScalarQuantizer;
use crate::rng;

/// A per-element standard deviation: one number for all elements or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Stds {
    Uniform(f64),
    PerDim(Vec<f64>),
}

impl Stds {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            Stds::Uniform(s) => *s,
            Stds::PerDim(v) => v[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub m: usize,
    /// Spread of speaker means, τ_j.
    pub between_std: Stds,
    /// Spread of a speaker's samples around its mean, σ_j.
    pub within_std: Stds,
    pub n_speakers: usize,
    pub k_samples: usize,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn isotropic(m: usize, tau: f64, sigma: f64, n_speakers: usize, k_samples: usize, seed: u64) -> Self {
        PopulationSpec {
            m,
            between_std: Stds::Uniform(tau),
            within_std: Stds::Uniform(sigma),
            n_speakers,
            k_samples,
            seed,
        }
    }

    /// The acceptance baseline: m=50, τ=1, σ=0.5, 1000 speakers × 100, seed 42.
    pub fn standard() -> Self {
        PopulationSpec::isotropic(50, 1.0, 0.5, 1000, 100, 42)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_speakers == 0 || self.k_samples == 0 {
            return Err(Error::Config("population dimensions and counts must be >= 1".into()));
        }
        for (name, stds) in [("between_std", &self.between_std), ("within_std", &self.within_std)] {
            if let Stds::PerDim(v) = stds {
                if v.len() != self.m {
                    return Err(Error::Config(format!("{name} has {} entries, m = {}", v.len(), self.m)));
                }
            }
            for j in 0..self.m {
                let s = stds.get(j);
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Config(format!("{name}[{j}] = {s} must be finite and positive")));
                }
            }
        }
        Ok(())
    }
}

/// Standard normal variates by CDF inversion of 53-bit open-interval uniforms.
pub struct NormalStream {
    rng: rng::Rng,
    normal: Normal,
}

impl NormalStream {
    pub fn new(rng: rng::Rng) -> Self {
        NormalStream {
            rng,
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn next(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }
}

fn speaker_id(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(4);
    format!("spk{i:0width$}")
}

/// Speaker means `μ_ij ~ N(0, τ_j²)`, samples `N(μ_ij, σ_j²)`.
pub fn generate_population(spec: &PopulationSpec) -> Result<SpeakerDataset> {
    spec.validate()?;
    let speakers = (0..spec.n_speakers)
        .into_par_iter()
        .map(|i| {
            let mut z = NormalStream::new(rng::stream(spec.seed, i as u64));
            let mean: Vec<f64> = (0..spec.m).map(|j| spec.between_std.get(j) * z.next()).collect();
            let vectors = (0..spec.k_samples)
                .map(|_| {
                    let v = (0..spec.m)
                        .map(|j| mean[j] + spec.within_std.get(j) * z.next())
                        .collect();
                    FeatureVector::new(v)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((speaker_id(i, spec.n_speakers), vectors))
        })
        .collect::<Result<Vec<_>>>()?;
    SpeakerDataset::new(spec.m, speakers.into_iter().collect())
}

/// Samples `x = F h_i + ε`, `h_i ~ N(0, I)` per speaker, `ε ~ N(0, W)` per
/// sample.
pub fn generate_plda_population(
    loading: &DMatrix<f64>,
    within: &DMatrix<f64>,
    n_speakers: usize,
    k_samples: usize,
    seed: u64,
) -> Result<SpeakerDataset> {
    let d = loading.nrows();
    if within.shape() != (d, d) {
        return Err(Error::dim(d, within.nrows()));
    }
    if n_speakers == 0 || k_samples == 0 {
        return Err(Error::Config("counts must be >= 1".into()));
    }
    let chol = linalg::cholesky(within, "within-speaker covariance")?;
    let l = chol.l();
    let ds = loading.ncols();
    let speakers = (0..n_speakers)
        .into_par_iter()
        .map(|i| {
            let mut z = NormalStream::new(rng::stream(seed, i as u64));
            let h = DVector::from_fn(ds, |_, _| z.next());
            let center = loading * h;
            let vectors = (0..k_samples)
                .map(|_| {
                    let e = DVector::from_fn(d, |_, _| z.next());
                    FeatureVector::new((&center + &l * e).as_slice().to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((speaker_id(i, n_speakers), vectors))
        })
        .collect::<Result<Vec<_>>>()?;
    SpeakerDataset::new(d, speakers.into_iter().collect())
}

/// `n_vectors` iid Bernoulli(`p`) vectors of `length` bits.
pub fn generate_iid_binary(n_vectors: usize, length: usize, p: f64, seed: u64) -> Result<Vec<Vec<u8>>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("bit probability must lie in (0, 1), got {p}")));
    }
    let mut z = NormalStream::new(rng::stream(seed, 0));
    Ok((0..n_vectors)
        .map(|_| (0..length).map(|_| u8::from(z.uniform() < p)).collect())
        .collect())
}

/// Probabilists' Gauss-Hermite rule (weight `e^{-x²/2}`), normalized so the
/// weights sum to one: `E[f(Z)] ≈ Σ w_i f(x_i)` for `Z ~ N(0, 1)`.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Golub-Welsch on the Jacobi matrix of the He_n recurrence.
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    (nodes.iter().map(|n| n.0).collect(), nodes.iter().map(|n| n.1 / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub order: usize,
    /// Largest tolerated per-element disagreement (bits) between the rule of
    /// `order` and one of half the order.
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { order: 64, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiOracle {
    pub h_population: f64,
    pub h_within: f64,
    pub i_bits: f64,
    /// Worst per-element disagreement between quadrature orders.
    pub achieved_tol: f64,
}

fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

fn cell_probs(q: &ScalarQuantizer, mean: f64, std: f64) -> Vec<f64> {
    let normal = Normal::new(mean, std).expect("positive std");
    let mut cdf: Vec<f64> = Vec::with_capacity(q.boundaries().len() + 2);
    cdf.push(0.0);
    cdf.extend(q.boundaries().iter().map(|&b| normal.cdf(b)));
    cdf.push(1.0);
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

fn expected_within_entropy(q: &ScalarQuantizer, tau: f64, sigma: f64, order: usize) -> f64 {
    let (x, w) = gauss_hermite(order);
    x.iter()
        .zip(&w)
        .map(|(&x, &w)| w * entropy_bits(&cell_probs(q, tau * x, sigma)))
        .sum()
}

/// Exact (up to quadrature) mutual information of a Gaussian population
/// under the given per-element quantizers.
pub fn numeric_mi_oracle(spec: &PopulationSpec, quantizers: &[ScalarQuantizer], opts: &OracleOptions) -> Result<MiOracle> {
    spec.validate()?;
    if quantizers.len() != spec.m {
        return Err(Error::dim(spec.m, quantizers.len()));
    }
    if opts.order < 4 {
        return Err(Error::Config("quadrature order must be >= 4".into()));
    }
    let mut h_population = 0.0;
    let mut h_within = 0.0;
    let mut achieved_tol: f64 = 0.0;
    for (j, q) in quantizers.iter().enumerate() {
        let (tau, sigma) = (spec.between_std.get(j), spec.within_std.get(j));
        h_population += entropy_bits(&cell_probs(q, 0.0, (tau * tau + sigma * sigma).sqrt()));
        let fine = expected_within_entropy(q, tau, sigma, opts.order);
        let coarse = expected_within_entropy(q, tau, sigma, opts.order / 2);
        achieved_tol = achieved_tol.max((fine - coarse).abs());
        h_within += fine;
    }
    if achieved_tol > opts.tol {
        return Err(Error::Numerical(format!(
            "Gauss-Hermite integration did not converge: achieved tolerance {achieved_tol:e} > {:e}",
            opts.tol
        )));
    }
    Ok(MiOracle {
        h_population,
        h_within,
        i_bits: h_population - h_within,
        achieved_tol,
    })
}

/// Size limits of [`brute_force_entropy_oracle`].
pub const BRUTE_FORCE_MAX_DIM: usize = 6;
pub const BRUTE_FORCE_MAX_BITS: u8 = 3;
pub const BRUTE_FORCE_MAX_VECTORS: usize = 10_000;

/// `(H(V), H(V|S))` recomputed by direct enumeration, for small datasets.
///
/// Uses `H = log2 N - (1/N) Σ c log2 c` over explicitly enumerated symbol
/// counts.
pub fn brute_force_entropy_oracle(qds: &QuantizedDataset) -> Result<(f64, f64)> {
    if qds.dim() > BRUTE_FORCE_MAX_DIM || qds.bits() > BRUTE_FORCE_MAX_BITS || qds.n_vectors() > BRUTE_FORCE_MAX_VECTORS {
        return Err(Error::OutOfRange(format!(
            "brute-force oracle limited to m <= {BRUTE_FORCE_MAX_DIM}, b <= {BRUTE_FORCE_MAX_BITS}, \
             <= {BRUTE_FORCE_MAX_VECTORS} vectors"
        )));
    }
    if qds.n_vectors() == 0 {
        return Err(Error::EmptyInput("no vectors".into()));
    }
    let symbols: Vec<u8> = (0..qds.alphabet_size() as u8).collect();
    let h = |vectors: &[&[u8]], j: usize| -> f64 {
        let n = vectors.len() as f64;
        let mut acc = 0.0;
        for &s in &symbols {
            let c = vectors.iter().filter(|v| v[j] == s).count() as f64;
            if c > 0.0 {
                acc += c * c.log2();
            }
        }
        n.log2() - acc / n
    };
    let all: Vec<&[u8]> = qds.vectors().collect();
    let h_pop: f64 = (0..qds.dim()).map(|j| h(&all, j)).sum();
    let mut h_within = 0.0;
    for (_, vs) in qds.speakers() {
        let group: Vec<&[u8]> = vs.iter().map(Vec::as_slice).collect();
        h_within += (0..qds.dim()).map(|j| h(&group, j)).sum::<f64>();
    }
    Ok((h_pop, h_within / qds.n_speakers() as f64))
}

/// Monte-Carlo estimate of `D(p‖q)` in bits from `draws` samples of `p`.
pub fn monte_carlo_kl(
    p_mean: &DVector<f64>,
    p_cov: &DMatrix<f64>,
    q_mean: &DVector<f64>,
    q_cov: &DMatrix<f64>,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let m = p_mean.len();
    let lp = linalg::cholesky(p_cov, "p covariance")?;
    let lq = linalg::cholesky(q_cov, "q covariance")?;
    let logdet_p = linalg::log_det_chol(&lp);
    let logdet_q = linalg::log_det_chol(&lq);
    let l = lp.l();
    let mut z = NormalStream::new(rng::stream(seed, 0));
    let mut total = 0.0;
    for _ in 0..draws {
        let e = DVector::from_fn(m, |_, _| z.next());
        let x = p_mean + &l * &e;
        let dq = &x - q_mean;
        // log p(x) - log q(x); the 2π terms cancel.
        let log_p = -0.5 * (e.dot(&e) + logdet_p);
        let log_q = -0.5 * (dq.dot(&lq.solve(&dq)) + logdet_q);
        total += log_p - log_q;
    }
    Ok(total / draws as f64 / std::f64::consts::LN_2)
}
