//! Speaker verification backend: preprocessing, LDA, Gaussian PLDA,
//! trial scoring and equal error rate.

pub mod eer;
pub mod lda;
pub mod model;
pub mod plda;
pub mod preprocess;
pub mod trials;

pub use eer::{compute_eer, det_points, OperatingPoint, ScoreSet};
pub use model::{fit_backend, load_model, save_model, BackendMeta, BackendModel, BackendOptions};
pub use plda::{fit_gplda, score_llr, GpldaFit, LlrScorer, Plda};
pub use trials::build_trials;
