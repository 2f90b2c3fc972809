//! Plug-in discrete entropies of quantized embeddings and the speaker
//! mutual information `I(S;V) = H(V) - H(V|S)`.
//!
//! Elements are treated as independent, so `H(V)` is the sum of per-element
//! entropies over the pooled population and `H(V|S)` is the average over
//! speakers (each equally likely) of the per-speaker sums. Estimates are raw
//! empirical (maximum-likelihood) entropies with `0 log 0 = 0`; no bias
//! correction is applied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::QuantizedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessEstimate {
    pub h_population: f64,
    pub h_within: f64,
    pub i_bits: f64,
    pub bits: u8,
    pub n_speakers: usize,
    pub k_samples: usize,
}

impl UniquenessEstimate {
    /// `log2 n`, the entropy of a uniformly chosen speaker.
    pub fn speaker_entropy(&self) -> f64 {
        (self.n_speakers as f64).log2()
    }
}

fn entropy_of_counts(counts: &[u64], total: u64) -> f64 {
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Entropy in bits of the empirical distribution of `codes` over an
/// alphabet of `alphabet_size` symbols.
pub fn element_entropy(codes: &[u32], alphabet_size: usize) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::EmptyInput("entropy of an empty sequence".into()));
    }
    let mut counts = vec![0u64; alphabet_size];
    for &c in codes {
        let slot = counts.get_mut(c as usize).ok_or_else(|| {
            Error::OutOfRange(format!("code {c} outside alphabet of size {alphabet_size}"))
        })?;
        *slot += 1;
    }
    Ok(entropy_of_counts(&counts, codes.len() as u64))
}

/// Sum over elements of per-element entropies for one group of vectors.
fn group_entropy<'a>(vectors: impl Iterator<Item = &'a [u8]>, dim: usize, alphabet: usize) -> f64 {
    let mut counts = vec![0u64; dim * alphabet];
    let mut total = 0u64;
    for v in vectors {
        for (j, &c) in v.iter().enumerate() {
            counts[j * alphabet + c as usize] += 1;
        }
        total += 1;
    }
    counts
        .chunks(alphabet)
        .map(|c| entropy_of_counts(c, total))
        .sum()
}

fn non_empty(qds: &QuantizedDataset) -> Result<()> {
    if qds.is_empty() || qds.n_vectors() == 0 {
        Err(Error::EmptyInput("quantized dataset has no vectors".into()))
    } else {
        Ok(())
    }
}

/// `H(V)`: per-element entropies of all vectors pooled, summed over elements.
pub fn vector_entropy(qds: &QuantizedDataset) -> Result<f64> {
    non_empty(qds)?;
    Ok(group_entropy(qds.vectors(), qds.dim(), qds.alphabet_size()))
}

/// `H(V|S)`: per-speaker vector entropy averaged with uniform speaker weight.
pub fn conditional_entropy(qds: &QuantizedDataset) -> Result<f64> {
    non_empty(qds)?;
    let (dim, alphabet) = (qds.dim(), qds.alphabet_size());
    let speakers: Vec<&[Vec<u8>]> = qds.speakers().map(|(_, v)| v).collect();
    let mut per_speaker: Vec<f64> = speakers
        .par_iter()
        .map(|vs| group_entropy(vs.iter().map(Vec::as_slice), dim, alphabet))
        .collect();
    // Summing in sorted order makes the total independent of both thread
    // count and speaker labels.
    per_speaker.sort_by(f64::total_cmp);
    let sum: f64 = per_speaker.iter().sum();
    Ok(sum / per_speaker.len() as f64)
}

/// Speaker mutual information with both entropy terms.
///
/// `k_samples` is echoed from the dataset when every speaker has the same
/// number of vectors, otherwise it is the minimum count.
pub fn mutual_information(qds: &QuantizedDataset) -> Result<UniquenessEstimate> {
    let h_population = vector_entropy(qds)?;
    let h_within = conditional_entropy(qds)?;
    Ok(UniquenessEstimate {
        h_population,
        h_within,
        i_bits: h_population - h_within,
        bits: qds.bits(),
        n_speakers: qds.n_speakers(),
        k_samples: qds.speakers().map(|(_, v)| v.len()).min().unwrap_or(0),
    })
}
