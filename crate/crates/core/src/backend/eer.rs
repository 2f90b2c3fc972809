use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of same-speaker (genuine) and different-speaker (impostor) trials.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        ScoreSet { genuine, impostor }
    }

    /// `label,score` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,score\n");
        for (label, scores) in [("genuine", &self.genuine), ("impostor", &self.impostor)] {
            for s in scores {
                out.push_str(label);
                out.push(',');
                out.push_str(&s.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut set = ScoreSet::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("label")) {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                location: format!("line {}", i + 1),
                message,
            };
            let (label, value) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected label,score".into()))?;
            let score: f64 = value
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("not a number: {value:?}")))?;
            if !score.is_finite() {
                return Err(parse_err(format!("non-finite score {value:?}")));
            }
            match label.trim() {
                "genuine" => set.genuine.push(score),
                "impostor" => set.impostor.push(score),
                other => return Err(parse_err(format!("unknown label {other:?}"))),
            }
        }
        Ok(set)
    }
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of impostor scores `>= threshold`.
    pub far: f64,
    /// Fraction of genuine scores `< threshold`.
    pub frr: f64,
}

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite score".into()));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// FAR/FRR at every distinct score, followed by a final point at `+∞`
/// (nothing accepted).
pub fn det_points(scores: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::EmptyInput(
            "EER needs at least one genuine and one impostor score".into(),
        ));
    }
    let genuine = sorted(&scores.genuine)?;
    let impostor = sorted(&scores.impostor)?;
    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points: Vec<OperatingPoint> = thresholds
        .iter()
        .map(|&t| OperatingPoint {
            threshold: t,
            far: (impostor.len() - impostor.partition_point(|&s| s < t)) as f64 / ni,
            frr: genuine.partition_point(|&s| s < t) as f64 / ng,
        })
        .collect();
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Equal error rate in `[0, 1]`.
///
/// `FAR - FRR` is non-increasing along the sweep. The EER is taken at the
/// first operating point where it reaches zero, or, when it changes sign
/// between two adjacent points, at the crossing of the segment joining them
/// in (FAR, FRR) space. Only rates enter, so any strictly increasing
/// transform of the scores leaves the result unchanged.
pub fn compute_eer(scores: &ScoreSet) -> Result<f64> {
    let points = det_points(scores)?;
    let mut prev = points[0];
    for &p in &points {
        let gap = p.far - p.frr;
        if gap == 0.0 {
            return Ok(p.far);
        }
        if gap < 0.0 {
            let prev_gap = prev.far - prev.frr;
            let alpha = prev_gap / (prev_gap - gap);
            let far = prev.far + alpha * (p.far - prev.far);
            let frr = prev.frr + alpha * (p.frr - prev.frr);
            return Ok(0.5 * (far + frr));
        }
        prev = p;
    }
    unreachable!("sweep ends at FAR = 0, FRR = 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        let s = ScoreSet::new(vec![0.9, 0.8], vec![0.1, 0.2]);
        assert_eq!(compute_eer(&s).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_half() {
        let s = ScoreSet::new(vec![0.8, 0.4], vec![0.6, 0.2]);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
    }

    #[test]
    fn identical_distributions_are_chance() {
        let s = ScoreSet::new(vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
        let s = ScoreSet::new(vec![0.0], vec![0.0]);
        assert_eq!(compute_eer(&s).unwrap(), 0.5);
    }

    #[test]
    fn empty_side_is_error() {
        assert!(matches!(compute_eer(&ScoreSet::new(vec![], vec![1.0])), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let s = ScoreSet::new(vec![0.5, -1.25], vec![3.0]);
        let text = s.to_csv();
        assert!(text.starts_with("label,score\ngenuine,0.5\n"));
        assert_eq!(ScoreSet::from_csv(&text).unwrap(), s);
        assert!(ScoreSet::from_csv("label,score\nfoo,1\n").is_err());
        assert!(ScoreSet::from_csv("label,score\ngenuine,x\n").is_err());
    }

    proptest! {
        #[test]
        fn eer_invariant_under_increasing_transform(
            g in proptest::collection::vec(-5.0f64..5.0, 1..40),
            i in proptest::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let a = compute_eer(&ScoreSet::new(g.clone(), i.clone())).unwrap();
            let f = |x: &f64| (x * 0.7).exp() * 3.0 - 1.0;
            let b = compute_eer(&ScoreSet::new(g.iter().map(f).collect(), i.iter().map(f).collect())).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
