use crate::error::{ensure, Result};

fn check_matrix(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<()> {
    ensure!(!truth.is_empty(), Validation, "empty input");
    ensure!(pred.len() == truth.len(), Contract, "{} predictions for {} samples", pred.len(), truth.len());
    let k = truth[0].len();
    ensure!(
        pred.iter().chain(truth).all(|r| r.len() == k),
        Contract,
        "label vectors must all have width {k}"
    );
    Ok(())
}

/// Fraction of samples whose whole label vector is predicted exactly.
pub fn subset_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_matrix(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    ensure!(!truth.is_empty(), Validation, "empty input");
    ensure!(pred.len() == truth.len(), Contract, "{} predictions for {} samples", pred.len(), truth.len());
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Unweighted mean over label columns of `2TP / (2TP + FP + FN)`; a column
/// with no positives in either input scores 0.
pub fn macro_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_matrix(pred, truth)?;
    let k = truth[0].len();
    ensure!(k > 0, Validation, "zero label columns");
    let mut total = 0.0;
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p[c], t[c]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += (2 * tp) as f64 / denom as f64;
        }
    }
    Ok(total / k as f64)
}

/// Macro F1 over classes for single-label predictions.
pub fn macro_f1_classes(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    ensure!(
        pred.iter().chain(truth).all(|&c| c < classes),
        Validation,
        "class index out of range for {classes} classes"
    );
    let one_hot = |v: &[usize]| -> Vec<Vec<bool>> { v.iter().map(|&c| (0..classes).map(|k| k == c).collect()).collect() };
    macro_f1(&one_hot(pred), &one_hot(truth))
}

/// Mean over samples of `|P & T| / |P | T|`; a sample with both sets empty
/// scores 1.
pub fn jaccard_index(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_matrix(pred, truth)?;
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let inter = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
        let union = p.iter().zip(t).filter(|(a, b)| **a || **b).count();
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(total / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(rows: &[&[u8]]) -> Vec<Vec<bool>> {
        rows.iter().map(|r| r.iter().map(|&x| x == 1).collect()).collect()
    }

    #[test]
    fn subset_accuracy_half() {
        let t = b(&[&[1, 0], &[0, 1], &[1, 1], &[0, 0]]);
        let p = b(&[&[1, 0], &[0, 1], &[0, 1], &[1, 0]]);
        assert_eq!(subset_accuracy(&p, &t).unwrap(), 0.5);
    }

    #[test]
    fn jaccard_one_third() {
        let v = jaccard_index(&b(&[&[1, 0, 1]]), &b(&[&[1, 1, 0]])).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_single_class_f1_is_one() {
        let t = b(&[&[1], &[1], &[0]]);
        assert_eq!(macro_f1(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(subset_accuracy(&[], &[]).is_err());
        assert!(accuracy(&[], &[]).is_err());
        assert!(macro_f1(&[], &[]).is_err());
        assert!(jaccard_index(&[], &[]).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(macro_f1(&b(&[&[1, 0]]), &b(&[&[1]])).is_err());
    }
}
