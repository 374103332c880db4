//! Small numeric helpers shared by the metric and statistics modules.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector has no direction")]
    ZeroVector,
    #[error("empty input")]
    Empty,
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NumericError> {
    if u.len() != v.len() {
        return Err(NumericError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(NumericError::Empty);
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(NumericError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Shannon entropy in bits of the distribution obtained by normalizing
/// `weights` to sum to one. Zero weights contribute nothing; an all-zero or
/// empty input has entropy 0.
pub fn shannon_entropy_bits<I>(weights: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let weights: Vec<f64> = weights.into_iter().filter(|w| *w > 0.0).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h = -weights
        .iter()
        .map(|w| {
            let p = w / total;
            p * p.log2()
        })
        .sum::<f64>();
    // a single outcome gives -0.0
    h.max(0.0)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample variance with the `n - 1` denominator. `None` below two values.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    Some(ss / (values.len() - 1) as f64)
}

pub fn sample_std(values: &[f64]) -> Option<f64> {
    sample_variance(values).map(f64::sqrt)
}

/// Quantile by linear interpolation between order statistics (the "type 7"
/// rule: `h = (n - 1) p`). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// `Q3 - Q1` under the type-7 quantile rule.
pub fn iqr(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, 0.75)? - quantile_sorted(&sorted, 0.25)?)
}

/// `count / total` as a percentage rounded half-up to `decimals` places,
/// returned as an integer in units of `10^-decimals` percent. Exact integer
/// arithmetic, so published tables can be matched digit for digit.
pub fn percent_half_up_scaled(count: u64, total: u64, decimals: u32) -> i64 {
    if total == 0 {
        return 0;
    }
    let scale = 100 * 10u128.pow(decimals);
    let num = count as u128 * scale;
    let den = total as u128;
    ((2 * num + den) / (2 * den)) as i64
}

/// Renders a scaled integer from [`percent_half_up_scaled`] as a decimal string.
pub fn format_scaled(value: i64, decimals: u32) -> String {
    if decimals == 0 {
        return value.to_string();
    }
    let div = 10i64.pow(decimals);
    let sign = if value < 0 { "-" } else { "" };
    let v = value.abs();
    format!(
        "{sign}{}.{:0width$}",
        v / div,
        v % div,
        width = decimals as usize
    )
}

/// Stable 64-bit mixing function (splitmix64 finalizer).
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent sub-seed for stream `index` of `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(NumericError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), Err(NumericError::ZeroVector));
        assert_eq!(cosine_similarity(&[], &[]), Err(NumericError::Empty));
    }

    #[test]
    fn entropy_identities() {
        assert_eq!(shannon_entropy_bits([1.0, 1.0, 1.0, 1.0]), 2.0);
        assert_eq!(shannon_entropy_bits([5.0]), 0.0);
        assert_eq!(shannon_entropy_bits(std::iter::empty()), 0.0);
        assert!((shannon_entropy_bits([2.0, 1.0, 1.0]) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), Some(1.75));
        assert_eq!(quantile(&v, 0.75), Some(3.25));
        assert_eq!(quantile(&[7.0], 0.5), Some(7.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn half_up_percentages() {
        // 101 / 196 = 51.5306...
        assert_eq!(percent_half_up_scaled(101, 196, 2), 5153);
        // 1 / 8 = 12.5 -> 13 at zero decimals
        assert_eq!(percent_half_up_scaled(1, 8, 0), 13);
        assert_eq!(percent_half_up_scaled(0, 0, 2), 0);
        assert_eq!(format_scaled(5153, 2), "51.53");
        assert_eq!(format_scaled(5, 2), "0.05");
        assert_eq!(format_scaled(464, 1), "46.4");
    }

    #[test]
    fn substreams_differ() {
        assert_ne!(substream_seed(1, 0), substream_seed(1, 1));
        assert_eq!(substream_seed(9, 3), substream_seed(9, 3));
    }
}
