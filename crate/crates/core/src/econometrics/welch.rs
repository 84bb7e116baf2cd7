use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Unequal-variance two-sample t test of `mean(a) - mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::metric(format!(
            "Welch test needs at least two observations per side (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (n_a, n_b) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (var_a / n_a, var_b / n_b);
    if qa + qb == 0.0 {
        return Err(Error::estimation("Welch test on two zero-variance samples"));
    }
    let t = (mean_a - mean_b) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (n_a - 1.0) + qb * qb / (n_b - 1.0));
    let p_value = StudentsT::new(0.0, 1.0, df)
        .map(|d| 2.0 * (1.0 - d.cdf(t.abs())))
        .map_err(|e| Error::estimation(format!("t distribution with df {df}: {e}")))?;
    Ok(WelchResult {
        mean_a,
        mean_b,
        var_a,
        var_b,
        t,
        df,
        p_value,
        n_a: a.len(),
        n_b: b.len(),
    })
}
