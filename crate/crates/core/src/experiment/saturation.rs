use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.005;

/// Smallest index `i` such that no later accuracy exceeds `acc[i] + eps`.
pub fn find_saturation(accuracies: &[f64], eps: f64) -> Result<usize> {
    if accuracies.len() < 2 {
        return Err(Error::validation("saturation needs at least two curve points"));
    }
    if !eps.is_finite() || eps < 0.0 || accuracies.iter().any(|a| !a.is_finite()) {
        return Err(Error::validation("saturation inputs must be finite with ε ≥ 0"));
    }
    // suffix maxima: best[i] = max(acc[i+1..])
    let n = accuracies.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    for i in (0..n - 1).rev() {
        best[i] = best[i + 1].max(accuracies[i + 1]);
    }
    Ok((0..n).find(|&i| best[i] <= accuracies[i] + eps).expect("last index always qualifies"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increasing_curve_saturates_last() {
        assert_eq!(find_saturation(&[0.1, 0.2, 0.3, 0.4], 0.005).unwrap(), 3);
    }

    #[test]
    fn flat_curve_saturates_first() {
        assert_eq!(find_saturation(&[0.5; 5], 0.005).unwrap(), 0);
    }

    #[test]
    fn single_point_is_rejected() {
        assert!(find_saturation(&[0.5], 0.005).is_err());
    }
}
