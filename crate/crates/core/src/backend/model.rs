use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lda::{fit_lda, Lda};
use super::plda::{fit_gplda, LlrScorer, Plda};
use super::preprocess::{fit_preprocess, Preprocessor};
use crate::data::{Cursor, SpeakerDataset};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"BIOB";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendOptions {
    /// LDA output dimension; `None` skips LDA.
    pub lda_dim: Option<usize>,
    /// PLDA speaker subspace; defaults to half the scoring dimension.
    pub speaker_dim: Option<usize>,
    pub iterations: usize,
    /// Relative eigenvalue floor for whitening and the LDA within-scatter.
    pub eigen_floor: f64,
}

impl Default for BackendOptions {
    fn default() -> Self {
        BackendOptions {
            lda_dim: None,
            speaker_dim: None,
            iterations: 10,
            eigen_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub input_dim: usize,
    pub lda_dim: Option<usize>,
    pub speaker_dim: usize,
    pub iterations: usize,
    pub final_loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub eigen_floor: f64,
    pub dev_speakers: usize,
    pub dev_vectors: usize,
    pub excluded_speakers: usize,
}

#[derive(Debug, Clone)]
pub struct BackendModel {
    pub preprocessor: Preprocessor,
    pub lda: Option<Lda>,
    pub plda: Plda,
    pub meta: BackendMeta,
}

impl BackendModel {
    pub fn input_dim(&self) -> usize {
        self.preprocessor.dim()
    }

    /// Center, whiten, length-normalize, then LDA-project if present.
    pub fn transform(&self, v: &[f64]) -> Result<DVector<f64>> {
        let w = self.preprocessor.apply(v)?;
        match &self.lda {
            Some(lda) => lda.project(&w),
            None => Ok(w),
        }
    }

    pub fn scorer(&self) -> Result<LlrScorer> {
        self.plda.scorer()
    }

    pub fn transform_dataset(&self, ds: &SpeakerDataset) -> Result<SpeakerDataset> {
        transform_with(ds, |v| self.transform(v))
    }
}

fn transform_with<F>(ds: &SpeakerDataset, f: F) -> Result<SpeakerDataset>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let mut records = Vec::with_capacity(ds.n_vectors());
    for (id, vectors) in ds.speakers() {
        for v in vectors {
            records.push((id, f(v)?.as_slice().to_vec()));
        }
    }
    let dim = records.first().map(|r| r.1.len()).unwrap_or(0);
    SpeakerDataset::from_records(dim, records)
}

pub fn fit_backend(dev: &SpeakerDataset, opts: &BackendOptions) -> Result<BackendModel> {
    let preprocessor = fit_preprocess(dev, opts.eigen_floor)?;
    let normalized = transform_with(dev, |v| preprocessor.apply(v))?;
    let (lda, projected) = match opts.lda_dim {
        Some(d) => {
            let lda = fit_lda(&normalized, d, opts.eigen_floor)?;
            let projected = transform_with(&normalized, |v| lda.project(&DVector::from_column_slice(v)))?;
            (Some(lda), projected)
        }
        None => (None, normalized),
    };
    let d = projected.dim();
    let speaker_dim = opts.speaker_dim.unwrap_or((d / 2).max(1));
    let fit = fit_gplda(&projected, speaker_dim, opts.iterations)?;
    let meta = BackendMeta {
        input_dim: dev.dim(),
        lda_dim: opts.lda_dim,
        speaker_dim,
        iterations: fit.iterations,
        final_loglik: *fit.loglik_trace.last().expect("trace holds the initial value"),
        loglik_trace: fit.loglik_trace,
        eigen_floor: opts.eigen_floor,
        dev_speakers: dev.n_speakers(),
        dev_vectors: dev.n_vectors(),
        excluded_speakers: fit.excluded_speakers,
    };
    Ok(BackendModel {
        preprocessor,
        lda,
        plda: fit.plda,
        meta,
    })
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    // Row-major.
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

fn get_matrix(cur: &mut Cursor, what: &str) -> Result<DMatrix<f64>> {
    let rows = cur.u32(what)? as usize;
    let cols = cur.u32(what)? as usize;
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let x = cur.f64(what)?;
        if !x.is_finite() {
            return Err(Error::Validation(format!("{what}: non-finite entry {x}")));
        }
        values.push(x);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Binary container: magic `BIOB`, u32 version, u32 flags (bit 0: LDA
/// present), then center, whitener, [LDA projection, LDA eigenvalues],
/// PLDA loading and PLDA within covariance as u32 rows, u32 cols and
/// row-major f64 values, all little-endian.
pub fn to_binary(model: &BackendModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.lda.is_some() as u32).to_le_bytes());
    put_matrix(&mut out, &DMatrix::from_column_slice(model.preprocessor.dim(), 1, model.preprocessor.center.as_slice()));
    put_matrix(&mut out, &model.preprocessor.whitener);
    if let Some(lda) = &model.lda {
        put_matrix(&mut out, &lda.projection);
        put_matrix(&mut out, &DMatrix::from_column_slice(lda.eigenvalues.len(), 1, lda.eigenvalues.as_slice()));
    }
    put_matrix(&mut out, &model.plda.loading);
    put_matrix(&mut out, &model.plda.within);
    out
}

pub fn from_binary(bytes: &[u8], meta: BackendMeta) -> Result<BackendModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Parse {
            location: "offset 0".into(),
            message: "bad magic, expected BIOB".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Parse {
            location: "offset 4".into(),
            message: format!("unsupported model version {version}"),
        });
    }
    let flags = cur.u32("flags")?;
    let center = get_matrix(&mut cur, "center")?;
    let whitener = get_matrix(&mut cur, "whitener")?;
    let lda = if flags & 1 == 1 {
        let projection = get_matrix(&mut cur, "LDA projection")?;
        let eigenvalues = get_matrix(&mut cur, "LDA eigenvalues")?;
        Some(Lda {
            projection,
            eigenvalues: eigenvalues.column(0).into_owned(),
        })
    } else {
        None
    };
    let loading = get_matrix(&mut cur, "PLDA loading")?;
    let within = get_matrix(&mut cur, "PLDA within covariance")?;
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            location: format!("offset {}", cur.pos),
            message: "trailing bytes after model".into(),
        });
    }
    let m = center.nrows();
    if whitener.shape() != (m, m) {
        return Err(Error::dim(m, whitener.nrows()));
    }
    let scoring_dim = match &lda {
        Some(l) if l.projection.nrows() != m => return Err(Error::dim(m, l.projection.nrows())),
        Some(l) => l.projection.ncols(),
        None => m,
    };
    if within.nrows() != scoring_dim {
        return Err(Error::dim(scoring_dim, within.nrows()));
    }
    Ok(BackendModel {
        preprocessor: Preprocessor {
            center: center.column(0).into_owned(),
            whitener,
        },
        lda,
        plda: Plda::new(loading, within)?,
        meta,
    })
}

/// Sidecar holding the JSON metadata next to a model file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_model(model: &BackendModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_binary(model)).map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    let text = serde_json::to_string_pretty(&model.meta)?;
    std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
}

pub fn load_model(path: &Path) -> Result<BackendModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    from_binary(&bytes, serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_population, PopulationSpec};

    fn population() -> SpeakerDataset {
        generate_population(&PopulationSpec::isotropic(8, 1.0, 0.5, 40, 10, 9)).unwrap()
    }

    #[test]
    fn whitener_identity_on_dev() {
        let ds = population();
        let model = fit_backend(&ds, &BackendOptions::default()).unwrap();
        let white: Vec<Vec<f64>> = ds
            .vectors()
            .map(|v| model.preprocessor.whiten(v).unwrap().as_slice().to_vec())
            .collect();
        let (_, cov, _) = crate::linalg::mean_cov(white.iter().map(Vec::as_slice), 8);
        assert!((cov - DMatrix::identity(8, 8)).amax() < 1e-6);
        assert_eq!(model.meta.speaker_dim, 4);
        assert_eq!(model.meta.loglik_trace.len(), 11);
    }

    #[test]
    fn binary_round_trip() {
        let ds = population();
        let opts = BackendOptions {
            lda_dim: Some(6),
            speaker_dim: Some(3),
            ..Default::default()
        };
        let model = fit_backend(&ds, &opts).unwrap();
        let back = from_binary(&to_binary(&model), model.meta.clone()).unwrap();
        assert_eq!(back.preprocessor, model.preprocessor);
        assert_eq!(back.lda, model.lda);
        assert_eq!(back.plda, model.plda);
        let v = ds.vectors().next().unwrap();
        assert_eq!(back.transform(v).unwrap(), model.transform(v).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.meta, model.meta);
        assert_eq!(loaded.plda, model.plda);
    }

    #[test]
    fn corrupt_container_rejected() {
        let ds = population();
        let model = fit_backend(&ds, &BackendOptions::default()).unwrap();
        let mut bytes = to_binary(&model);
        bytes.pop();
        assert!(matches!(from_binary(&bytes, model.meta.clone()), Err(Error::Parse { .. })));
        bytes[0] = b'X';
        assert!(matches!(from_binary(&bytes, model.meta), Err(Error::Parse { .. })));
    }
}
