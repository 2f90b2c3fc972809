//! Gaussian PLDA: `x = F h + ε`, `h ~ N(0, I)`, `ε ~ N(0, W)`, zero mean.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::SpeakerDataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct Plda {
    /// Speaker loading `F`, `d × d_s`.
    pub loading: DMatrix<f64>,
    /// Residual covariance `W`, `d × d`.
    pub within: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GpldaFit {
    pub plda: Plda,
    /// Data log-likelihood before the first update and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub excluded_speakers: usize,
}

impl Plda {
    pub fn new(loading: DMatrix<f64>, within: DMatrix<f64>) -> Result<Self> {
        let d = within.nrows();
        if within.ncols() != d || loading.nrows() != d {
            return Err(Error::dim(d, loading.nrows()));
        }
        if loading.ncols() > d {
            return Err(Error::Config("speaker subspace larger than feature dimension".into()));
        }
        linalg::cholesky(&within, "PLDA within-speaker covariance")?;
        Ok(Plda { loading, within })
    }

    pub fn dim(&self) -> usize {
        self.within.nrows()
    }

    pub fn speaker_dim(&self) -> usize {
        self.loading.ncols()
    }

    /// `B = F Fᵀ`.
    pub fn between(&self) -> DMatrix<f64> {
        &self.loading * self.loading.transpose()
    }

    pub fn scorer(&self) -> Result<LlrScorer> {
        LlrScorer::new(&self.between(), &self.within)
    }
}

/// Precomputed same-versus-different speaker log-likelihood ratio.
///
/// With `T = B + W` and `S = T - B T⁻¹ B`,
/// `llr = ½x₁ᵀQx₁ + ½x₂ᵀQx₂ + x₁ᵀPx₂ + ½(ln|T| - ln|S|)` where
/// `Q = T⁻¹ - S⁻¹` and `P = S⁻¹ B T⁻¹`.
#[derive(Debug, Clone)]
pub struct LlrScorer {
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

impl LlrScorer {
    pub fn new(between: &DMatrix<f64>, within: &DMatrix<f64>) -> Result<Self> {
        let total = between + within;
        let chol_t = linalg::cholesky(&total, "total covariance")?;
        let t_inv = chol_t.inverse();
        let schur = linalg::symmetrize(&(&total - between * &t_inv * between));
        let chol_s = linalg::cholesky(&schur, "same-speaker Schur complement")?;
        let s_inv = chol_s.inverse();
        let p = linalg::symmetrize(&(&s_inv * between * &t_inv));
        Ok(LlrScorer {
            q: linalg::symmetrize(&(t_inv - &s_inv)),
            p,
            constant: 0.5 * (linalg::log_det_chol(&chol_t) - linalg::log_det_chol(&chol_s)),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn score(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
        if x1.len() != self.dim() || x2.len() != self.dim() {
            return Err(Error::dim(self.dim(), x1.len().max(x2.len())));
        }
        let quad = x1.dot(&(&self.q * x1)) + x2.dot(&(&self.q * x2));
        let cross = x1.dot(&(&self.p * x2)) + x2.dot(&(&self.p * x1));
        Ok(0.5 * quad + 0.5 * cross + self.constant)
    }
}

/// Log-likelihood ratio of "same speaker" over "different speakers".
pub fn score_llr(plda: &Plda, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != plda.dim() || x2.len() != plda.dim() {
        return Err(Error::dim(plda.dim(), x1.len().max(x2.len())));
    }
    plda.scorer()?
        .score(&DVector::from_column_slice(x1), &DVector::from_column_slice(x2))
}

struct SpeakerStats {
    n: usize,
    sum: DVector<f64>,
}

/// Posterior precision `L = I + n FᵀW⁻¹F` per distinct sample count.
struct Posterior {
    inv: DMatrix<f64>,
    log_det: f64,
}

/// Fits `F` (`d × speaker_dim`) and `W` by `iters` EM iterations on
/// zero-mean data. Speakers with a single vector are skipped.
pub fn fit_gplda(ds: &SpeakerDataset, speaker_dim: usize, iters: usize) -> Result<GpldaFit> {
    let d = ds.dim();
    if speaker_dim == 0 || speaker_dim > d {
        return Err(Error::Config(format!("speaker dimension {speaker_dim} must lie in 1..={d}")));
    }
    let mut excluded = 0;
    let mut stats = Vec::new();
    let mut scatter = DMatrix::zeros(d, d);
    let mut within_scatter = DMatrix::zeros(d, d);
    let mut mean_outer = DMatrix::zeros(d, d);
    let mut total = 0usize;
    for (id, vectors) in ds.speakers() {
        if vectors.len() < 2 {
            warn!("PLDA training: speaker {id:?} has a single vector and is excluded");
            excluded += 1;
            continue;
        }
        let mut sum = DVector::zeros(d);
        for v in vectors {
            let x = DVector::from_column_slice(v);
            scatter.ger(1.0, &x, &x, 1.0);
            sum += &x;
        }
        let n = vectors.len();
        let mean = &sum / n as f64;
        for v in vectors {
            let e = DVector::from_column_slice(v) - &mean;
            within_scatter.ger(1.0, &e, &e, 1.0);
        }
        mean_outer.ger(1.0, &mean, &mean, 1.0);
        total += n;
        stats.push(SpeakerStats { n, sum });
    }
    if stats.is_empty() {
        return Err(Error::InsufficientData(
            "PLDA training needs speakers with at least 2 vectors".into(),
        ));
    }
    let n_spk = stats.len() as f64;
    let avg_n = total as f64 / n_spk;

    // Moment initialization: W from within-speaker scatter, F from the
    // leading directions of the speaker-mean covariance minus W/n̄.
    let mut within = within_scatter / (total as f64 - n_spk).max(1.0);
    let floor = 1e-6 * within.trace().max(f64::MIN_POSITIVE) / d as f64;
    if linalg::smallest_eigenvalue(&within) < floor {
        within += DMatrix::identity(d, d) * floor;
    }
    let between0 = &mean_outer / n_spk - &within / avg_n;
    let (values, vectors) = linalg::sym_eigen_desc(&between0);
    let scale_floor = 1e-3 * values[0].abs().max(floor);
    let mut loading = DMatrix::zeros(d, speaker_dim);
    for k in 0..speaker_dim {
        let s = values[k].max(scale_floor).sqrt();
        loading.set_column(k, &(vectors.column(k) * s));
    }

    let mut trace = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let e = e_step(&stats, &scatter, total, &loading, &within)?;
        trace.push(e.loglik);
        // M-step.
        let q_inv = linalg::cholesky(&e.hh_weighted, "PLDA posterior second moment")?.inverse();
        loading = &e.xh * q_inv;
        within = linalg::symmetrize(&((&scatter - &loading * e.xh.transpose()) / total as f64));
        linalg::cholesky(&within, "PLDA within-speaker covariance")?;
    }
    trace.push(e_step(&stats, &scatter, total, &loading, &within)?.loglik);

    Ok(GpldaFit {
        plda: Plda::new(loading, within)?,
        loglik_trace: trace,
        iterations: iters,
        excluded_speakers: excluded,
    })
}

struct EStep {
    /// `Σ_i sum_i E[h_i]ᵀ`.
    xh: DMatrix<f64>,
    /// `Σ_i n_i E[h_i h_iᵀ]`.
    hh_weighted: DMatrix<f64>,
    loglik: f64,
}

fn e_step(
    stats: &[SpeakerStats],
    scatter: &DMatrix<f64>,
    total: usize,
    loading: &DMatrix<f64>,
    within: &DMatrix<f64>,
) -> Result<EStep> {
    let d = within.nrows();
    let ds = loading.ncols();
    let chol_w = linalg::cholesky(within, "PLDA within-speaker covariance")?;
    let w_inv_f = chol_w.solve(loading);
    let ftwf = linalg::symmetrize(&(loading.transpose() * &w_inv_f));

    let mut posteriors: BTreeMap<usize, Posterior> = BTreeMap::new();
    for s in stats {
        if let std::collections::btree_map::Entry::Vacant(slot) = posteriors.entry(s.n) {
            let prec = DMatrix::identity(ds, ds) + &ftwf * s.n as f64;
            let chol = linalg::cholesky(&prec, "PLDA posterior precision")?;
            slot.insert(Posterior {
                inv: chol.inverse(),
                log_det: linalg::log_det_chol(&chol),
            });
        }
    }

    struct Partial {
        xh: DMatrix<f64>,
        hh: DMatrix<f64>,
        log_det: f64,
        quad: f64,
    }
    let partials: Vec<Partial> = stats
        .par_iter()
        .map(|s| {
            let post = &posteriors[&s.n];
            let b = w_inv_f.tr_mul(&s.sum);
            let h = &post.inv * &b;
            let mut hh = post.inv.clone();
            hh.ger(1.0, &h, &h, 1.0);
            Partial {
                xh: &s.sum * h.transpose(),
                hh: hh * s.n as f64,
                log_det: post.log_det,
                quad: b.dot(&h),
            }
        })
        .collect();

    let mut xh = DMatrix::zeros(d, ds);
    let mut hh_weighted = DMatrix::zeros(ds, ds);
    let mut log_det_sum = 0.0;
    let mut quad_sum = 0.0;
    for p in &partials {
        xh += &p.xh;
        hh_weighted += &p.hh;
        log_det_sum += p.log_det;
        quad_sum += p.quad;
    }
    let n = total as f64;
    let trace_term = chol_w.solve(scatter).trace();
    let loglik = -0.5
        * (n * d as f64 * (2.0 * std::f64::consts::PI).ln()
            + n * linalg::log_det_chol(&chol_w)
            + log_det_sum
            + trace_term
            - quad_sum);
    Ok(EStep {
        xh,
        hh_weighted,
        loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_plda_population;

    fn gaussian_logpdf(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let chol = cov.clone().cholesky().unwrap();
        let n = x.len() as f64;
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + linalg::log_det_chol(&chol) + x.dot(&chol.solve(x)))
    }

    /// Direct evaluation of the two stacked-Gaussian densities.
    fn llr_oracle(b: &DMatrix<f64>, w: &DMatrix<f64>, x1: &[f64], x2: &[f64]) -> f64 {
        let d = b.nrows();
        let t = b + w;
        let mut same = DMatrix::zeros(2 * d, 2 * d);
        let mut diff = DMatrix::zeros(2 * d, 2 * d);
        same.view_mut((0, 0), (d, d)).copy_from(&t);
        same.view_mut((d, d), (d, d)).copy_from(&t);
        same.view_mut((0, d), (d, d)).copy_from(b);
        same.view_mut((d, 0), (d, d)).copy_from(b);
        diff.view_mut((0, 0), (d, d)).copy_from(&t);
        diff.view_mut((d, d), (d, d)).copy_from(&t);
        let z = DVector::from_iterator(2 * d, x1.iter().chain(x2).copied());
        gaussian_logpdf(&z, &same) - gaussian_logpdf(&z, &diff)
    }

    #[test]
    fn scorer_matches_stacked_gaussian() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.5, 0.8, 0.3, 0.0]);
        let w = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.7, -0.2, 0.0, -0.2, 0.9]);
        let plda = Plda::new(f, w.clone()).unwrap();
        let pairs = [([0.3, -1.0, 0.2], [0.1, 0.5, -0.7]), ([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])];
        for (a, b) in pairs {
            let got = score_llr(&plda, &a, &b).unwrap();
            let want = llr_oracle(&plda.between(), &w, &a, &b);
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            assert_eq!(got, score_llr(&plda, &b, &a).unwrap());
        }
    }

    #[test]
    fn no_speaker_variability_scores_zero() {
        let plda = Plda::new(DMatrix::zeros(2, 1), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(score_llr(&plda, &[1.0, 2.0], &[-3.0, 0.5]).unwrap(), 0.0);
        assert_eq!(score_llr(&plda, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_ordering() {
        let plda = Plda::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let same = score_llr(&plda, &[1.0], &[1.0]).unwrap();
        let opposite = score_llr(&plda, &[1.0], &[-1.0]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!((same - llr_oracle(&one, &one, &[1.0], &[1.0])).abs() < 1e-12);
        assert!(same > opposite);
        assert!(matches!(score_llr(&plda, &[1.0, 2.0], &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn em_loglik_monotone_and_within_pd() {
        let f = DMatrix::from_fn(6, 2, |i, j| ((i + 2 * j) as f64 * 0.7).sin());
        let w = DMatrix::from_fn(6, 6, |i, j| if i == j { 0.5 } else { 0.05 });
        let ds = generate_plda_population(&f, &w, 80, 6, 3).unwrap();
        let fit = fit_gplda(&ds, 2, 15).unwrap();
        assert_eq!(fit.loglik_trace.len(), 16);
        for pair in fit.loglik_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-6 * pair[0].abs(), "{:?}", fit.loglik_trace);
        }
        assert!(linalg::smallest_eigenvalue(&fit.plda.within) > 0.0);
    }

    #[test]
    fn single_sample_speakers_are_excluded() {
        let mut records = vec![("solo", vec![1.0, 0.0])];
        for s in ["a", "b", "c"] {
            for k in 0..3 {
                records.push((s, vec![k as f64 + s.len() as f64, (k * k) as f64 * 0.3 - 0.2]));
            }
        }
        let ds = SpeakerDataset::from_records(2, records).unwrap();
        let fit = fit_gplda(&ds, 1, 3).unwrap();
        assert_eq!(fit.excluded_speakers, 1);
        let only_solo = SpeakerDataset::from_records(2, vec![("solo", vec![1.0, 0.0])]).unwrap();
        assert!(matches!(fit_gplda(&only_solo, 1, 3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_loading_population_has_small_between() {
        let f = DMatrix::zeros(4, 2);
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 2.0, 0.8]));
        let ds = generate_plda_population(&f, &w, 500, 20, 5).unwrap();
        let fit = fit_gplda(&ds, 2, 10).unwrap();
        assert!(fit.plda.between().norm() < 0.1 * w.norm(), "{}", fit.plda.between().norm());
    }
}
