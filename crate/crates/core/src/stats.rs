//! Small numeric helpers shared across modules.

/// Arithmetic mean. Returns `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
///
/// Two-pass; constant samples give exactly zero. Returns `NaN` when fewer than two values are supplied.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    if values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Empirical percentile with linear interpolation between order statistics.
///
/// `rank` is on the 0..=100 scale; position is `(n - 1) * rank / 100` in the
/// sorted sample. Returns `None` for an empty sample or a non-finite rank.
pub fn percentile(values: &[f64], rank: f64) -> Option<f64> {
    if values.is_empty() || !rank.is_finite() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(percentile_sorted(&sorted, rank))
}

/// Same as [`percentile`] for an already sorted, non-empty sample.
pub fn percentile_sorted(sorted: &[f64], rank: f64) -> f64 {
    let q = (rank / 100.0).clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_linear_interpolation() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 90.0).unwrap() - 90.1).abs() < 1e-12);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), Some(2.5));
        assert_eq!(percentile(&[7.0; 5], 33.0), Some(7.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn std_uses_sample_denominator() {
        assert!((sample_std(&[0.0, 0.0, 3.0]) - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(sample_std(&[4.0, 4.0, 4.0]), 0.0);
        assert!(sample_std(&[1.0]).is_nan());
    }
}
