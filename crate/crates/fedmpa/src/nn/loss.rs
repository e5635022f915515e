//! Losses over masked node sets: softmax cross-entropy and matrix MSE.

use crate::error::{Error, Result};
use crate::nn::matrix::DenseMatrix;

/// Numerically stable per-row softmax (max-subtracted).
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood of the true class over the masked rows.
/// Returns the loss and its gradient w.r.t. the logits: on masked rows
/// `(softmax - onehot) / |mask|`, zero elsewhere.
pub fn softmax_ce_loss(
    logits: &DenseMatrix,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("softmax cross-entropy".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let n_classes = logits.cols();
    for &i in mask {
        if i >= logits.rows() {
            return Err(Error::Domain(format!("mask index {} out of range", i)));
        }
        if labels[i] >= n_classes {
            return Err(Error::Domain(format!(
                "label {} at node {} outside [0,{})",
                labels[i], i, n_classes
            )));
        }
    }

    let inv = 1.0 / mask.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), n_classes);
    let mut loss = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_sum = max + sum.ln();
        loss += log_sum - row[labels[i]];
        let grow = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            grow[j] = (p - if j == labels[i] { 1.0 } else { 0.0 }) * inv;
        }
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax cross-entropy loss".into()));
    }
    Ok((loss, grad))
}

/// Mean squared error over all cells. Returns the loss and its gradient
/// w.r.t. `b`: `2(b - a) / (rows*cols)`.
pub fn mse_matrix(a: &DenseMatrix, b: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "mse over {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let inv = 1.0 / (a.rows() * a.cols()) as f64;
    let mut grad = DenseMatrix::zeros(b.rows(), b.cols());
    let mut loss = 0.0;
    for ((g, &av), &bv) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = bv - av;
        loss += d * d;
        *g = 2.0 * d * inv;
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("matrix mse loss".into()));
    }
    Ok((loss, grad))
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// (correct, total) of argmax predictions over the masked rows.
pub fn masked_accuracy(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> (usize, usize) {
    let mut correct = 0;
    for &i in mask {
        if argmax_row(logits.row(i)) == labels[i] {
            correct += 1;
        }
    }
    (correct, mask.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;
    use rand::Rng as _;

    #[test]
    fn uniform_logits_over_seven_classes_cost_ln_seven() {
        let logits = DenseMatrix::zeros(3, 7);
        let labels = vec![2, 0, 6];
        let mask = vec![0, 1, 2];
        let (loss, grad) = softmax_ce_loss(&logits, &labels, &mask).unwrap();
        assert!((loss - 7.0_f64.ln()).abs() < 1e-12);
        assert!((loss - 1.945910149055313).abs() < 1e-12);
        // Gradient rows sum to zero and the true class has the only negative.
        for &i in &mask {
            let row_sum: f64 = grad.row(i).iter().sum();
            assert!(row_sum.abs() < 1e-12);
            assert!(grad.get(i, labels[i]) < 0.0);
        }
    }

    #[test]
    fn huge_true_class_margin_drives_loss_to_zero() {
        let mut logits = DenseMatrix::zeros(2, 4);
        logits.set(0, 1, 500.0);
        logits.set(1, 3, 500.0);
        let (loss, _) = softmax_ce_loss(&logits, &[1, 3], &[0, 1]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn ce_matches_brute_force_per_row_computation() {
        let mut rng = seeded(31);
        let logits = DenseMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        let mask = vec![0, 2, 3];

        // Oracle: direct scalar softmax per masked row.
        let mut want = 0.0;
        for &i in &mask {
            let row = logits.row(i);
            let exps: Vec<f64> = row.iter().map(|&v| v.exp()).collect();
            let sum: f64 = exps.iter().sum();
            want += -(exps[labels[i]] / sum).ln();
        }
        want /= mask.len() as f64;

        let (loss, grad) = softmax_ce_loss(&logits, &labels, &mask).unwrap();
        assert!((loss - want).abs() < 1e-12);

        // Unmasked rows carry no gradient.
        for j in 0..3 {
            assert_eq!(grad.get(1, j), 0.0);
            assert_eq!(grad.get(4, j), 0.0);
        }
        // Masked rows: (softmax - onehot)/|mask|.
        for &i in &mask {
            let row = logits.row(i);
            let exps: Vec<f64> = row.iter().map(|&v| v.exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..3 {
                let p = exps[j] / sum;
                let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                assert!((grad.get(i, j) - (p - onehot) / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_mask_is_a_domain_error() {
        let logits = DenseMatrix::zeros(2, 2);
        let err = softmax_ce_loss(&logits, &[0, 1], &[]).unwrap_err();
        assert!(matches!(err, crate::error::Error::EmptyMask(_)));
    }

    #[test]
    fn out_of_range_label_is_a_domain_error() {
        let logits = DenseMatrix::zeros(2, 2);
        let err = softmax_ce_loss(&logits, &[0, 5], &[0, 1]).unwrap_err();
        assert!(matches!(err, crate::error::Error::Domain(_)));
    }

    #[test]
    fn mse_of_equal_matrices_is_zero() {
        let a = DenseMatrix::from_fn(3, 2, |i, j| (i * j) as f64);
        let (loss, grad) = mse_matrix(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_identity_vs_zero_is_half() {
        let a = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = DenseMatrix::zeros(2, 2);
        let (loss, grad) = mse_matrix(&a, &b).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        // grad_b = 2(b-a)/4.
        assert!((grad.get(0, 0) + 0.5).abs() < 1e-15);
        assert_eq!(grad.get(0, 1), 0.0);
    }

    #[test]
    fn mse_matches_scalar_loop_oracle() {
        let mut rng = seeded(77);
        let a = DenseMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DenseMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));

        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = a.get(i, j) - b.get(i, j);
                want += d * d;
            }
        }
        want /= 9.0;

        let (loss, grad) = mse_matrix(&a, &b).unwrap();
        assert!((loss - want).abs() < 1e-14);
        for i in 0..3 {
            for j in 0..3 {
                let g = 2.0 * (b.get(i, j) - a.get(i, j)) / 9.0;
                assert!((grad.get(i, j) - g).abs() < 1e-14);
            }
        }

        let bad = DenseMatrix::zeros(2, 3);
        assert!(mse_matrix(&a, &bad).is_err());
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        assert_eq!(argmax_row(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_row(&[5.0]), 0);
        let logits = DenseMatrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (correct, total) = masked_accuracy(&logits, &[1, 0], &[0, 1]);
        assert_eq!((correct, total), (2, 2));
    }
}
