//! Standard normal tail probabilities and rejection thresholds.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Φ(x), evaluated through `erfc` so the lower tail keeps full relative
/// precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided P-value 2Φ(−|s|).
pub fn p_value(statistic: f64) -> Result<f64> {
    if !statistic.is_finite() {
        return Err(Error::NonFinite(statistic));
    }
    Ok(erfc(statistic.abs() / std::f64::consts::SQRT_2).min(1.0))
}

/// −Φ⁻¹(α/2): reject when |statistic| strictly exceeds this.
pub fn two_sided_threshold(alpha: f64) -> f64 {
    let std = Normal::standard();
    -std.inverse_cdf(alpha / 2.0)
}
