use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::design::{build_design, hour_term, term_hour, ModelSpec, INTERCEPT};
use crate::error::{Error, Result};
use crate::ingest::Panel;

/// Leverage at or above `1 - LEVERAGE_TOL` is treated as a perfect-leverage row.
pub const LEVERAGE_TOL: f64 = 1e-10;

/// A column is collinear when its diagonal entry in R falls below this
/// fraction of the column's norm.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub hat: DVector<f64>,
    /// Thin Q factor of X.
    pub q: DMatrix<f64>,
    /// Inverse of the upper-triangular R factor.
    pub r_inv: DMatrix<f64>,
}

/// Least squares via Householder QR. `terms` label the columns for error
/// messages.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, terms: &[String]) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::estimation(format!("design has {n} rows but response has {}", y.len())));
    }
    if n < k {
        return Err(Error::estimation(format!("{n} observations cannot identify {k} terms")));
    }
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let collinear: Vec<&str> = (0..k)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .map(|j| terms.get(j).map(String::as_str).unwrap_or("?"))
        .collect();
    if !collinear.is_empty() {
        return Err(Error::estimation(format!(
            "design is rank deficient; collinear terms: {}",
            collinear.join(", ")
        )));
    }
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::estimation("triangular factor is singular"))?;
    let coef = &r_inv * (q.transpose() * y);
    let residuals = y - x * &coef;
    let hat = DVector::from_iterator(n, q.row_iter().map(|row| row.norm_squared()));
    Ok(OlsFit {
        coef,
        residuals,
        hat,
        q,
        r_inv,
    })
}

/// HC3 standard errors, evaluated as `R⁻¹ (Qᵀ D Q) R⁻ᵀ` which equals the
/// textbook sandwich `(XᵀX)⁻¹ Xᵀ D X (XᵀX)⁻¹` with `D = diag(e²/(1-h)²)`.
pub fn hc3_se(fit: &OlsFit) -> Result<DVector<f64>> {
    let (n, k) = fit.q.shape();
    let mut scaled = fit.q.clone();
    for i in 0..n {
        let h = fit.hat[i];
        if h >= 1.0 - LEVERAGE_TOL {
            return Err(Error::estimation(format!(
                "row {} has leverage {h:.12}; HC3 is undefined for perfect-leverage rows",
                i + 1
            )));
        }
        let w = fit.residuals[i] / (1.0 - h);
        scaled.row_mut(i).scale_mut(w);
    }
    let meat = scaled.transpose() * &scaled;
    let cov = &fit.r_inv * meat * fit.r_inv.transpose();
    Ok(DVector::from_iterator(k, (0..k).map(|j| cov[(j, j)].max(0.0).sqrt())))
}

/// Classical (homoskedastic) standard errors, for comparison only.
pub fn classical_se(fit: &OlsFit) -> DVector<f64> {
    let (n, k) = fit.q.shape();
    let s2 = fit.residuals.norm_squared() / (n - k).max(1) as f64;
    let xtx_inv = &fit.r_inv * fit.r_inv.transpose();
    DVector::from_iterator(k, (0..k).map(|j| (s2 * xtx_inv[(j, j)]).sqrt()))
}

/// `1 - (SSR/(n-k-1)) / (SST/(n-1))` with `k` regressors besides the
/// intercept. `None` when undefined.
pub fn adj_r2(residuals: &DVector<f64>, y: &DVector<f64>, k: usize) -> Option<f64> {
    let n = y.len();
    if n <= k + 1 {
        return None;
    }
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return None;
    }
    let ssr = residuals.norm_squared();
    Some(1.0 - (ssr / (n - k - 1) as f64) / (sst / (n - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: String,
    pub coef: f64,
    pub se_hc3: f64,
    /// `coef / se_hc3`; absent when the standard error is zero.
    pub t: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub fit_id: String,
    pub spec: ModelSpec,
    pub terms: Vec<TermEstimate>,
    pub dropped_terms: Vec<String>,
    pub adj_r2: Option<f64>,
    pub n: usize,
    pub df_resid: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn term(&self, name: &str) -> Option<&TermEstimate> {
        self.terms.iter().find(|t| t.term == name)
    }

    pub fn intercept(&self) -> Option<&TermEstimate> {
        self.term(INTERCEPT)
    }

    pub fn hour(&self, hour: u8) -> Option<&TermEstimate> {
        self.term(&hour_term(hour))
    }

    pub fn congestion(&self) -> Option<&TermEstimate> {
        self.terms
            .iter()
            .find(|t| t.term == "phi_br" || t.term == "phi_s")
    }

    pub fn hour_terms(&self) -> impl Iterator<Item = (u8, &TermEstimate)> {
        self.terms.iter().filter_map(|t| term_hour(&t.term).map(|h| (h, t)))
    }
}

/// Two-sided p-value of a t statistic.
pub fn two_sided_p(t: f64, df: usize) -> Option<f64> {
    if df == 0 || !t.is_finite() {
        return None;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Significance stars: `***` p<0.001, `**` p<0.01, `*` p<0.05.
pub fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

/// Fits `spec` on `panel` with HC3 inference.
pub fn fit(panel: &Panel, spec: &ModelSpec) -> Result<FitResult> {
    let design = build_design(panel, spec)?;
    let ols = ols_fit(&design.x, &design.y, &design.terms)?;
    let se = hc3_se(&ols)?;
    let (n, k) = design.x.shape();
    let df_resid = n - k;
    let terms = design
        .terms
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let t = (se[j] > 0.0).then(|| ols.coef[j] / se[j]);
            TermEstimate {
                term: term.clone(),
                coef: ols.coef[j],
                se_hc3: se[j],
                t,
                p_value: t.and_then(|t| two_sided_p(t, df_resid)),
            }
        })
        .collect();
    let has_intercept = design.terms.iter().any(|t| t == INTERCEPT);
    Ok(FitResult {
        fit_id: format!("{}-n{n}", spec.label()),
        spec: spec.clone(),
        terms,
        dropped_terms: design.dropped,
        adj_r2: adj_r2(&ols.residuals, &design.y, k - usize::from(has_intercept)),
        n,
        df_resid,
        warnings: design.warnings,
    })
}
