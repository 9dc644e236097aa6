use super::ops::sigmoid;
use super::Matrix;
use crate::error::{Error, Result};

/// Probability clamp used by `bce`.
pub const PROB_EPS: f64 = 1e-12;

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    let cols = logits.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/batch`.
pub fn softmax_crossentropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    logits.ensure_finite("logits")?;
    if labels.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::validation(format!("label {bad} out of range")));
    }
    let batch = logits.rows() as f64;
    let mut grad = softmax(logits);
    let cols = logits.cols();
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let g = &mut grad.data_mut()[r * cols..(r + 1) * cols];
        g[label] -= 1.0;
        for v in g.iter_mut() {
            *v /= batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Mean binary cross-entropy of probabilities (clamped to `[ε, 1−ε]`) and
/// its gradient with respect to the probabilities.
pub fn bce(probs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pairs(probs, targets)?;
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(targets) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push(-(t / p - (1.0 - t) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// `bce(sigmoid(logits), targets)` computed stably from logits; gradient is
/// with respect to the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pairs(logits, targets)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - t) / n);
    }
    Ok((loss / n, grad))
}

fn check_pairs(values: &[f64], targets: &[f64]) -> Result<()> {
    if values.len() != targets.len() || values.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            values.len(),
            targets.len()
        )));
    }
    if values.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::validation("loss input contains NaN or infinite values"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln3() {
        let logits = Matrix::zeros(4, 3);
        let (loss, _) = softmax_crossentropy(&logits, &[0, 1, 2, 1]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Matrix::from_fn(5, 3, |r, c| (r as f64 - c as f64 * 7.0) * 40.0);
        let p = softmax(&logits);
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_half_is_ln2() {
        let (loss, _) = bce(&[0.5], &[1.0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let (loss, _) = bce_with_logits(&[0.0], &[0.0]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logits_form_matches_probability_form() {
        let z = [-3.0, -0.2, 0.0, 1.7, 6.0];
        let t = [0.0, 1.0, 1.0, 0.0, 1.0];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (a, _) = bce(&p, &t).unwrap();
        let (b, _) = bce_with_logits(&z, &t).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn nan_inputs_rejected() {
        assert!(bce(&[f64::NAN], &[1.0]).is_err());
        let mut m = Matrix::zeros(1, 3);
        m.data_mut()[0] = f64::NAN;
        assert!(softmax_crossentropy(&m, &[0]).is_err());
    }
}
