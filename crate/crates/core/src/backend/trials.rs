use log::warn;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::eer::ScoreSet;
use super::model::BackendModel;
use crate::data::SpeakerDataset;
use crate::error::{Error, Result};
use crate::quantizer::{dequantize, quantize, QuantizerBank};
use crate::rng;

struct Enrolled {
    model: DVector<f64>,
    test: DVector<f64>,
}

/// Leave-one-out verification trials on `measure`.
///
/// Each speaker's vectors are shuffled with a stream keyed by the seed and
/// the speaker id; the last one becomes the test vector and the mean of the
/// rest (after preprocessing) becomes the enrollment model. Every test is
/// scored against every enrollment: `n` genuine and `n(n-1)` impostor
/// scores. With a bank, raw vectors are quantized and dequantized first.
pub fn build_trials(
    measure: &SpeakerDataset,
    bank: Option<&QuantizerBank>,
    model: &BackendModel,
    seed: u64,
) -> Result<ScoreSet> {
    if measure.dim() != model.input_dim() {
        return Err(Error::dim(model.input_dim(), measure.dim()));
    }
    let eligible: Vec<(&str, &[crate::data::FeatureVector])> = measure
        .speakers()
        .filter(|(id, vectors)| {
            if vectors.len() < 2 {
                warn!("trials: speaker {id:?} has fewer than 2 vectors and is excluded");
                false
            } else {
                true
            }
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData(
            "trials need at least one speaker with 2 or more vectors".into(),
        ));
    }

    let enrolled: Vec<Enrolled> = eligible
        .par_iter()
        .map(|(id, vectors)| {
            let mut order: Vec<usize> = (0..vectors.len()).collect();
            order.shuffle(&mut rng::stream(rng::derive(seed, rng::fnv1a(id.as_bytes())), 0));
            let mut embedded = Vec::with_capacity(order.len());
            for &i in &order {
                let raw = &vectors[i];
                let x = match bank {
                    Some(b) => model.transform(&dequantize(b, &quantize(b, raw)?)?)?,
                    None => model.transform(raw)?,
                };
                embedded.push(x);
            }
            let test = embedded.pop().expect("at least 2 vectors");
            let mut mean = DVector::zeros(test.len());
            for x in &embedded {
                mean += x;
            }
            mean /= embedded.len() as f64;
            Ok(Enrolled { model: mean, test })
        })
        .collect::<Result<_>>()?;

    let scorer = model.scorer()?;
    let rows: Vec<(f64, Vec<f64>)> = enrolled
        .par_iter()
        .enumerate()
        .map(|(t, e)| {
            let mut genuine = 0.0;
            let mut impostor = Vec::with_capacity(enrolled.len() - 1);
            for (s, target) in enrolled.iter().enumerate() {
                let score = scorer.score(&e.test, &target.model)?;
                if s == t {
                    genuine = score;
                } else {
                    impostor.push(score);
                }
            }
            Ok((genuine, impostor))
        })
        .collect::<Result<_>>()?;

    let mut scores = ScoreSet::default();
    for (g, imp) in rows {
        scores.genuine.push(g);
        scores.impostor.extend(imp);
    }
    Ok(scores)
}
