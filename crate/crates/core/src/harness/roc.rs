use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::report::sig6;

/// `rows × cols` scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{rows}x{cols} scores"),
                actual: values.len().to_string(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix".into()));
        }
        Ok(SimilarityMatrix { rows, cols, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// `values[i·cols + j]` is true when reference `i` and target `j` share an
/// identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<bool>,
}

impl GroundTruth {
    pub fn from_labels<T: PartialEq>(reference: &[T], target: &[T]) -> Self {
        let values = reference
            .iter()
            .flat_map(|r| target.iter().map(move |t| r == t))
            .collect();
        GroundTruth {
            rows: reference.len(),
            cols: target.len(),
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are accepted; the first point uses `+∞`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl Roc {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", sig6(p.fpr), sig6(p.tpr), sig6(p.threshold)));
        }
        out
    }
}

/// ROC curve and AUC of `scores` against `truth`.
///
/// The AUC is the Mann–Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting half. It is accumulated
/// as the integer `2·wins + ties` and divided once, so equal inputs give
/// bit-identical results regardless of method.
pub fn roc_auc(scores: &SimilarityMatrix, truth: &GroundTruth) -> Result<Roc> {
    if scores.rows != truth.rows || scores.cols != truth.cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} ground truth", scores.rows, scores.cols),
            actual: format!("{}x{}", truth.rows, truth.cols),
        });
    }
    let mut pairs: Vec<(f64, bool)> = scores.values.iter().copied().zip(truth.values.iter().copied()).collect();
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels { positives, negatives });
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Walking thresholds downward: each group of equal scores adds `tp`
    // positives and `fp` negatives; its pairs against negatives already
    // passed are wins, against its own negatives ties.
    let (mut tp_total, mut fp_total) = (0u128, 0u128);
    let mut doubled: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        let (mut tp, mut fp) = (0u128, 0u128);
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Positives in this group beat every negative with a lower score.
        let lower_neg = negatives as u128 - fp_total - fp;
        doubled += 2 * tp * lower_neg + tp * fp;
        tp_total += tp;
        fp_total += fp;
        points.push(RocPoint {
            fpr: fp_total as f64 / negatives as f64,
            tpr: tp_total as f64 / positives as f64,
            threshold: s,
        });
    }
    let auc = doubled as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(Roc {
        points,
        auc,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(s: &SimilarityMatrix, g: &GroundTruth) -> f64 {
        let pos: Vec<f64> = s.values.iter().zip(&g.values).filter(|p| *p.1).map(|p| *p.0).collect();
        let neg: Vec<f64> = s.values.iter().zip(&g.values).filter(|p| !*p.1).map(|p| *p.0).collect();
        let mut doubled: u128 = 0;
        for &p in &pos {
            for &n in &neg {
                doubled += if p > n {
                    2
                } else if p == n {
                    1
                } else {
                    0
                };
            }
        }
        doubled as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
    }

    #[test]
    fn separated_and_tied_scores() {
        let g = GroundTruth::from_labels(&[0, 1], &[0, 1]);
        let s = SimilarityMatrix::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(roc_auc(&s, &g).unwrap().auc, 1.0);
        let s = SimilarityMatrix::new(2, 2, vec![0.5; 4]).unwrap();
        let r = roc_auc(&s, &g).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.points.last().unwrap().fpr, 1.0);
    }

    #[test]
    fn degenerate_labels() {
        let g = GroundTruth::from_labels(&[0, 0], &[0, 0]);
        let s = SimilarityMatrix::new(2, 2, vec![0.5; 4]).unwrap();
        assert!(matches!(roc_auc(&s, &g), Err(Error::DegenerateLabels { .. })));
    }

    #[test]
    fn matches_pair_counting_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let labels: Vec<u8> = (0..24).map(|_| rng.random_range(0..4)).collect();
            let g = GroundTruth::from_labels(&labels, &labels);
            // Coarse quantization forces plenty of ties.
            let v: Vec<f64> = (0..24 * 24).map(|_| rng.random_range(-10i32..=10) as f64 / 10.0).collect();
            let s = SimilarityMatrix::new(24, 24, v).unwrap();
            assert_eq!(roc_auc(&s, &g).unwrap().auc, brute_force(&s, &g));
        }
    }

    #[test]
    fn curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..10).map(|i| i / 5).collect();
        let g = GroundTruth::from_labels(&labels, &labels);
        let s = SimilarityMatrix::new(10, 10, (0..100).map(|_| rng.random::<f64>()).collect()).unwrap();
        let r = roc_auc(&s, &g).unwrap();
        for w in r.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold);
        }
        assert_eq!(r.points.len(), 101);
    }
}
