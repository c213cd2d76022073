use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera {
    pub statistic: f64,
    pub p_value: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Jarque-Bera normality test on a residual vector.
///
/// Skewness and kurtosis use central moments with divisor `n`. The
/// statistic is asymptotically χ² with 2 degrees of freedom, whose
/// survival function is `exp(−x/2)`.
pub fn jarque_bera(residuals: &[f64]) -> Result<JarqueBera> {
    let n = residuals.len();
    if n < 8 {
        return Err(HvsError::InvalidInput(format!(
            "Jarque-Bera needs at least 8 residuals, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for r in residuals {
        let d = r - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 || !m2.is_finite() {
        return Err(HvsError::ZeroVariance("residuals".into()));
    }
    let skewness = m3 / m2.powf(1.5);
    let kurtosis = m4 / (m2 * m2);
    let statistic = nf / 6.0 * (skewness * skewness + (kurtosis - 3.0).powi(2) / 4.0);
    Ok(JarqueBera {
        statistic,
        p_value: (-statistic / 2.0).exp(),
        skewness,
        kurtosis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_mesokurtic_sample_gives_zero() {
        // {−1, 0, 1} with P(±1) = 1/6 each: m2 = m4 = 1/3, kurtosis 3
        let v: Vec<f64> = [1.0, -1.0, 0.0, 0.0, 0.0, 0.0].repeat(4);
        let jb = jarque_bera(&v).unwrap();
        assert!(jb.skewness.abs() < 1e-15);
        assert!((jb.kurtosis - 3.0).abs() < 1e-12);
        assert!(jb.statistic.abs() < 1e-10);
        assert!((jb.p_value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_is_an_error() {
        assert!(jarque_bera(&[2.0; 10]).is_err());
    }

    #[test]
    fn short_input_is_an_error() {
        assert!(jarque_bera(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn statistic_matches_hand_computation() {
        let v = [0.5, 1.2, -0.3, 2.8, 0.1, -1.4, 0.9, 3.3, -0.2, 0.0];
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let c = |p: i32| v.iter().map(|x| (x - m).powi(p)).sum::<f64>() / n;
        let s = c(3) / c(2).powf(1.5);
        let k = c(4) / c(2).powi(2);
        let want = n / 6.0 * (s * s + (k - 3.0).powi(2) / 4.0);
        let jb = jarque_bera(&v).unwrap();
        assert!((jb.statistic - want).abs() < 1e-12);
    }
}
