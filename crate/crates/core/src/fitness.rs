//! Fitness and accuracy of a population on a labelled batch.

use thiserror::Error;

use crate::data::Dataset;
use crate::model::{ModelError, PopulationParams};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Predicted probabilities are clamped to at least this value before the
/// logarithm, so fitness stays finite even for a zero probability on the
/// true class.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FitnessError {
    #[error("label row {row} is not one-hot: {reason}")]
    NotOneHot { row: usize, reason: String },
    #[error("{op}: {axis} axis mismatch: {left} vs {right}")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("label count {labels} does not match batch size {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("label {value} at row {row} exceeds class count {classes}")]
    LabelRange {
        row: usize,
        value: u8,
        classes: usize,
    },
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn check_prediction_shapes<F: Scalar>(
    op: &'static str,
    predictions: &Tensor<F>,
    batch: usize,
    classes: usize,
) -> Result<(), FitnessError> {
    if predictions.rank() != 3 {
        return Err(FitnessError::Rank {
            op,
            expected: 3,
            shape: predictions.shape().to_vec(),
        });
    }
    if predictions.shape()[1] != batch {
        return Err(FitnessError::AxisMismatch {
            op,
            axis: "batch",
            left: predictions.shape()[1],
            right: batch,
        });
    }
    if predictions.shape()[2] != classes {
        return Err(FitnessError::AxisMismatch {
            op,
            axis: "class",
            left: predictions.shape()[2],
            right: classes,
        });
    }
    Ok(())
}

/// Extracts the hot index of every one-hot row, validating that each entry
/// is exactly 0 or 1 and that exactly one entry per row is 1.
pub(crate) fn one_hot_indices<F: Scalar>(onehot: &Tensor<F>) -> Result<Vec<usize>, FitnessError> {
    if onehot.rank() != 2 {
        return Err(FitnessError::Rank {
            op: "one_hot_indices",
            expected: 2,
            shape: onehot.shape().to_vec(),
        });
    }
    let d = onehot.shape()[1];
    let mut indices = Vec::with_capacity(onehot.shape()[0]);
    for (row, values) in onehot.data().chunks(d).enumerate() {
        let mut hot = None;
        for (j, &v) in values.iter().enumerate() {
            if v == F::one() {
                if hot.is_some() {
                    return Err(FitnessError::NotOneHot {
                        row,
                        reason: "more than one entry equals 1".into(),
                    });
                }
                hot = Some(j);
            } else if v != F::zero() {
                return Err(FitnessError::NotOneHot {
                    row,
                    reason: format!("entry {j} is {v}, expected 0 or 1"),
                });
            }
        }
        match hot {
            Some(j) => indices.push(j),
            None => {
                return Err(FitnessError::NotOneHot {
                    row,
                    reason: "no entry equals 1".into(),
                })
            }
        }
    }
    Ok(indices)
}

/// Per-individual batch fitness: mean log-probability of the true classes,
/// normalized by both batch size `n` and class count `d`:
///
/// `f(k) = (1 / (n·d)) Σ_i log(max(q[k, i, y_i], floor))`
///
/// Values are never positive and higher is better; a perfect prediction
/// scores 0. The inner accumulation runs in `f64` regardless of `F` so the
/// result is reproducible to tight tolerances.
pub fn cross_entropy_fitness<F: Scalar>(
    predictions: &Tensor<F>,
    labels_onehot: &Tensor<F>,
) -> Result<Vec<F>, FitnessError> {
    let hot = one_hot_indices(labels_onehot)?;
    let n = labels_onehot.shape()[0];
    let d = labels_onehot.shape()[1];
    check_prediction_shapes("cross_entropy_fitness", predictions, n, d)?;
    let p = predictions.shape()[0];
    let norm = 1.0 / (n as f64 * d as f64);

    let mut fitness = Vec::with_capacity(p);
    for k in 0..p {
        let base = k * n * d;
        let mut sum = 0.0f64;
        for (i, &j) in hot.iter().enumerate() {
            let q = predictions.data()[base + i * d + j].as_f64();
            sum += q.max(PROBABILITY_FLOOR).ln();
        }
        fitness.push(F::cast(sum * norm));
    }
    Ok(fitness)
}

/// Per-individual classification accuracy in `[0, 1]`. The predicted class
/// is the argmax of each probability row; ties resolve to the lowest index.
pub fn accuracy<F: Scalar>(
    predictions: &Tensor<F>,
    labels: &[u8],
) -> Result<Vec<f64>, FitnessError> {
    if predictions.rank() != 3 {
        return Err(FitnessError::Rank {
            op: "accuracy",
            expected: 3,
            shape: predictions.shape().to_vec(),
        });
    }
    let (p, n, d) = (
        predictions.shape()[0],
        predictions.shape()[1],
        predictions.shape()[2],
    );
    if labels.len() != n {
        return Err(FitnessError::LabelCount {
            labels: labels.len(),
            batch: n,
        });
    }
    for (row, &value) in labels.iter().enumerate() {
        if usize::from(value) >= d {
            return Err(FitnessError::LabelRange {
                row,
                value,
                classes: d,
            });
        }
    }
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let mut correct = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = &predictions.data()[k * n * d + i * d..k * n * d + (i + 1) * d];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            if best == usize::from(label) {
                correct += 1;
            }
        }
        out.push(correct as f64 / n as f64);
    }
    Ok(out)
}

/// Accuracy of every individual over a whole dataset, evaluated in chunks of
/// at most `chunk` images to bound memory. Results are exact counts, so the
/// chunk size never changes the answer.
pub fn full_set_accuracy<F: Scalar>(
    params: &PopulationParams<F>,
    dataset: &Dataset<F>,
    chunk: usize,
) -> Result<Vec<f64>, FitnessError> {
    if chunk == 0 {
        return Err(FitnessError::ZeroChunk);
    }
    let p = params.population_size();
    let total = dataset.len();
    let mut correct = vec![0usize; p];
    let mut start = 0;
    while start < total {
        let len = chunk.min(total - start);
        let images = dataset
            .images_range(start, len)
            .expect("range checked by loop bounds");
        let probs = params.forward(&images)?;
        let labels = &dataset.labels()[start..start + len];
        let accs = accuracy(&probs, labels)?;
        for (k, acc) in accs.into_iter().enumerate() {
            // accuracy returns correct/len; recover the exact count.
            correct[k] += (acc * len as f64).round() as usize;
        }
        start += len;
    }
    Ok(correct
        .into_iter()
        .map(|c| c as f64 / total as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::one_hot;
    use crate::model::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_predictions_over_ten_classes() {
        // Every probability 0.1 → fitness log(0.1) · n / (n·10) = log(0.1)/10.
        let p = Tensor::<f64>::from_fn(vec![2, 4, 10], |_| 0.1);
        let labels = one_hot::<f64>(&[0, 3, 7, 9], 10);
        let f = cross_entropy_fitness(&p, &labels).unwrap();
        let expected = 0.1f64.ln() / 10.0;
        for v in f {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
        assert!((0.1f64.ln() / 10.0 + 0.230_258_5).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let labels = [0u8, 1];
        let onehot = one_hot::<f64>(&labels, 2);
        let mut preds = Tensor::<f64>::zeros(vec![1, 2, 2]);
        preds.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let f = cross_entropy_fitness(&preds, &onehot).unwrap();
        assert!(f[0] <= 0.0);
        assert!(f[0] >= -1e-11);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let labels = [0u8];
        let onehot = one_hot::<f64>(&labels, 2);
        let mut preds = Tensor::<f64>::zeros(vec![1, 1, 2]);
        preds.data_mut().copy_from_slice(&[0.0, 1.0]);
        let f = cross_entropy_fitness(&preds, &onehot).unwrap();
        let expected = PROBABILITY_FLOOR.ln() / 2.0;
        assert!((f[0] - expected).abs() < 1e-9);
        assert!(f[0].is_finite());
    }

    #[test]
    fn fitness_is_never_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = NetworkSpec::new((4, 4), vec![6, 3]).unwrap();
        let params =
            crate::model::PopulationParams::<f32>::glorot_uniform_init(spec, 5, &mut rng).unwrap();
        let images = Tensor::from_fn(vec![7, 4, 4], |i| (i % 11) as f32 / 11.0);
        let probs = params.forward(&images).unwrap();
        let labels: Vec<u8> = (0..7).map(|i| (i % 3) as u8).collect();
        let f = cross_entropy_fitness(&probs, &one_hot(&labels, 3)).unwrap();
        assert!(f.iter().all(|&v| v <= 0.0 && v.is_finite()));
    }

    #[test]
    fn duplicating_the_batch_leaves_fitness_unchanged() {
        let labels = [0u8, 1, 2];
        let onehot = one_hot::<f64>(&labels, 3);
        let preds = Tensor::<f64>::from_fn(vec![2, 3, 3], |i| match i % 3 {
            0 => 0.5,
            1 => 0.3,
            _ => 0.2,
        });
        let doubled_labels = [0u8, 1, 2, 0, 1, 2];
        let onehot2 = one_hot::<f64>(&doubled_labels, 3);
        let mut data2 = preds.data().to_vec();
        // duplicate each individual's batch block
        let mut full = Vec::new();
        for k in 0..2 {
            let block = &data2[k * 9..(k + 1) * 9];
            full.extend_from_slice(block);
            full.extend_from_slice(block);
        }
        data2 = full;
        let preds2 = Tensor::new(vec![2, 6, 3], data2).unwrap();
        let f1 = cross_entropy_fitness(&preds, &onehot).unwrap();
        let f2 = cross_entropy_fitness(&preds2, &onehot2).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a, b, "doubling the batch must not move the mean");
        }
    }

    #[test]
    fn rejects_non_one_hot_rows() {
        let preds = Tensor::<f64>::from_fn(vec![1, 2, 2], |_| 0.5);
        let mut bad = Tensor::<f64>::zeros(vec![2, 2]);
        bad.data_mut().copy_from_slice(&[1.0, 1.0, 0.5, 0.5]);
        let err = cross_entropy_fitness(&preds, &bad).unwrap_err();
        assert!(matches!(err, FitnessError::NotOneHot { row: 0, .. }));
        let mut none_hot = Tensor::<f64>::zeros(vec![2, 2]);
        none_hot.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let err = cross_entropy_fitness(&preds, &none_hot).unwrap_err();
        assert!(matches!(err, FitnessError::NotOneHot { row: 1, .. }));
    }

    #[test]
    fn accuracy_ties_resolve_to_lowest_index() {
        // Uniform rows predict class 0 everywhere.
        let preds = Tensor::<f32>::from_fn(vec![1, 4, 3], |_| 1.0 / 3.0);
        let labels = [0u8, 1, 0, 2];
        let acc = accuracy(&preds, &labels).unwrap();
        assert_eq!(acc, vec![0.5]);
    }

    #[test]
    fn accuracy_counts_matches() {
        let mut preds = Tensor::<f32>::zeros(vec![2, 2, 3]);
        // individual 0: predicts 2 then 0; individual 1: predicts 1 then 1
        preds.data_mut().copy_from_slice(&[
            0.1, 0.2, 0.7, //
            0.8, 0.1, 0.1, //
            0.1, 0.8, 0.1, //
            0.2, 0.6, 0.2,
        ]);
        let labels = [2u8, 1];
        let acc = accuracy(&preds, &labels).unwrap();
        assert_eq!(acc, vec![0.5, 0.5]);
    }

    #[test]
    fn full_set_accuracy_is_chunk_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = NetworkSpec::new((4, 4), vec![8, 3]).unwrap();
        let params =
            crate::model::PopulationParams::<f32>::glorot_uniform_init(spec, 4, &mut rng).unwrap();
        let ds = crate::data::synthetic_blobs::<f32>(3, (4, 4), 11, 3.0, 13).unwrap();
        let a = full_set_accuracy(&params, &ds, 7).unwrap();
        let b = full_set_accuracy(&params, &ds, 33).unwrap();
        let c = full_set_accuracy(&params, &ds, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
