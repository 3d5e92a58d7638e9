use crate::error::{Error, Result};

/// Stabilizer in the weight denominator.
pub const WEIGHT_EPSILON: f64 = 1e-9;

/// `p_c / (p_c + alpha * p_n + 1e-9)`.
pub fn weight(p_c: f64, p_n: f64, alpha: f64) -> f64 {
    p_c / (p_c + alpha * p_n + WEIGHT_EPSILON)
}

/// Per-row sample weights for penalty `alpha`.
pub fn compute_weights(p_c: &[f64], p_n: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if p_c.len() != p_n.len() {
        return Err(Error::InvalidInput(format!(
            "p_C has {} rows but p_N has {}",
            p_c.len(),
            p_n.len()
        )));
    }
    if let Some(bad) = p_c
        .iter()
        .chain(p_n)
        .find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p)))
    {
        return Err(Error::InvalidInput(format!("probability {bad} outside [0, 1]")));
    }
    Ok(p_c.iter().zip(p_n).map(|(&c, &n)| weight(c, n, alpha)).collect())
}
