//! Evaluation metrics: ROC AUC for pair tasks, accuracy for node
//! classification, and mean/std aggregation across runs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric inputs are empty")]
    Empty,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("ROC AUC needs both classes present")]
    SingleClass,
    #[error("score is not finite")]
    NonFiniteScore,
}

/// Rank-based ROC AUC. Tied scores receive average ranks, so a tie between
/// a positive and a negative counts half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average-rank assignment over tie runs, 1-based ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64, MetricError> {
    if predicted.is_empty() {
        return Err(MetricError::Empty);
    }
    if predicted.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            scores: predicted.len(),
            labels: truth.len(),
        });
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "mean_std over empty slice");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_half_on_mixed_ranking() {
        let auc = roc_auc(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_one_on_perfect_separation() {
        let auc = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_zero_on_inverted_ranking() {
        let auc = roc_auc(&[0.9, 0.1], &[0, 1]).unwrap();
        assert!(auc.abs() < 1e-12);
    }

    #[test]
    fn ties_count_half() {
        // All scores equal: every positive-negative comparison is a tie.
        let auc = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pairwise_count_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.gen_range(5..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
                continue;
            }
            let mut wins = 0.0;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        total += 1.0;
                        if scores[i] > scores[j] {
                            wins += 1.0;
                        } else if scores[i] == scores[j] {
                            wins += 0.5;
                        }
                    }
                }
            }
            let auc = roc_auc(&scores, &labels).unwrap();
            assert!((auc - wins / total).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let transforms: Vec<fn(f64) -> f64> = vec![
            |x| 3.0 * x + 7.0,
            |x| x.exp(),
            |x| x.powi(3) + 2.0 * x,
            |x| x / (1.0 + x.abs()),
        ];
        for _ in 0..30 {
            let n = rng.gen_range(4..50);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let base = roc_auc(&scores, &labels).unwrap();
            for t in &transforms {
                let mapped: Vec<f64> = scores.iter().map(|&s| t(s)).collect();
                let auc = roc_auc(&mapped, &labels).unwrap();
                assert_eq!(auc.to_bits(), base.to_bits());
            }
        }
    }

    #[test]
    fn auc_rejects_degenerate_inputs() {
        assert!(matches!(roc_auc(&[], &[]), Err(MetricError::Empty)));
        assert!(matches!(
            roc_auc(&[0.5, 0.2], &[1, 1]),
            Err(MetricError::SingleClass)
        ));
        assert!(matches!(
            roc_auc(&[0.5], &[1, 0]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_counts_matches() {
        let acc = accuracy(&[1, 0, 2, 1], &[1, 1, 2, 0]).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_std_uses_sample_variance() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((s - 2.0f64.sqrt()).abs() < 1e-12);

        let (m, s) = mean_std(&[4.0]);
        assert_eq!((m, s), (4.0, 0.0));
    }
}
