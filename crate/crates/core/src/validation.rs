//! Concentration-bound corrected risks and agnostic regression relevance.
//!
//! `Ψ(n, δ, C) = sqrt(C·ln(1/δ) / 2n)` widens a resubstitution risk into an
//! upper bound on the true risk. Classification accuracy is corrected with
//! the PAC-Bayes penalty `sqrt(((1−η)·P·ln 2 + ln(1/δ)) / 2n)`. SAR compares
//! a fitted line against the intercept-only baseline after moving the model
//! risk up and the baseline risk down by Ψ.

use thiserror::Error;

use crate::region_stats::{CorrelationResult, CorrelationTable};

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("complexity constant must be positive, got {0}")]
    Complexity(f64),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    Dropout(f64),
    #[error("sample size must be at least {need}, got {got}")]
    SampleSize { need: usize, got: usize },
    #[error("{0} must lie in [0, 1], got {1}")]
    Rate(&'static str, f64),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub delta: f64,
    pub complexity: f64,
    pub dropout: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { delta: 0.05, complexity: 1.0, dropout: 0.5 }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(ValidationError::Delta(self.delta));
        }
        if !(self.complexity > 0.0) || !self.complexity.is_finite() {
            return Err(ValidationError::Complexity(self.complexity));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ValidationError::Dropout(self.dropout));
        }
        Ok(())
    }
}

pub fn concentration_bound(n: usize, delta: f64, c: f64) -> Result<f64, ValidationError> {
    if n == 0 {
        return Err(ValidationError::SampleSize { need: 1, got: 0 });
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ValidationError::Delta(delta));
    }
    if !(c > 0.0) {
        return Err(ValidationError::Complexity(c));
    }
    Ok((c * (1.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub context: String,
    pub n: usize,
    pub delta: f64,
    pub complexity: f64,
    pub dropout: f64,
    /// Empirical error rate.
    pub empirical: f64,
    pub psi: f64,
    /// Corrected error rate, in [empirical, 1].
    pub corrected: f64,
    pub significant: bool,
}

impl BoundResult {
    pub fn corrected_accuracy(&self) -> f64 {
        1.0 - self.corrected
    }
}

pub fn cubv_corrected_error(empirical: f64, n: usize, delta: f64, c: f64) -> Result<BoundResult, ValidationError> {
    if !(0.0..=1.0).contains(&empirical) {
        return Err(ValidationError::Rate("empirical error", empirical));
    }
    let psi = concentration_bound(n, delta, c)?;
    let corrected = (empirical + psi).min(1.0);
    Ok(BoundResult {
        context: String::new(),
        n,
        delta,
        complexity: c,
        dropout: 0.0,
        empirical,
        psi,
        corrected,
        significant: corrected < 0.5,
    })
}

pub fn pac_bayes_penalty(parameter_count: usize, dropout: f64, n: usize, delta: f64) -> Result<f64, ValidationError> {
    if n == 0 {
        return Err(ValidationError::SampleSize { need: 1, got: 0 });
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ValidationError::Delta(delta));
    }
    if !(0.0..=1.0).contains(&dropout) {
        return Err(ValidationError::Dropout(dropout));
    }
    let kl = (1.0 - dropout) * parameter_count as f64 * std::f64::consts::LN_2 + (1.0 / delta).ln();
    Ok((kl / (2.0 * n as f64)).sqrt())
}

/// Accuracy minus the PAC-Bayes penalty, floored at 0; significant when the
/// corrected accuracy exceeds 0.5. The result stores error rates
/// (`1 − accuracy`) so it lines up with [`cubv_corrected_error`].
pub fn pac_bayes_corrected_accuracy(
    accuracy: f64,
    parameter_count: usize,
    dropout: f64,
    n: usize,
    delta: f64,
) -> Result<BoundResult, ValidationError> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(ValidationError::Rate("accuracy", accuracy));
    }
    if parameter_count == 0 {
        return Err(ValidationError::SampleSize { need: 1, got: 0 });
    }
    let penalty = pac_bayes_penalty(parameter_count, dropout, n, delta)?;
    let corrected_acc = (accuracy - penalty).max(0.0);
    Ok(BoundResult {
        context: String::new(),
        n,
        delta,
        complexity: parameter_count as f64,
        dropout,
        empirical: 1.0 - accuracy,
        psi: penalty,
        corrected: 1.0 - corrected_acc,
        significant: corrected_acc > 0.5,
    })
}

pub fn bound_csv(results: &[BoundResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["context", "n", "delta", "C", "eta", "empirical", "psi", "corrected", "significant"])
        .expect("in-memory");
    for r in results {
        w.write_record([
            r.context.clone(),
            r.n.to_string(),
            r.delta.to_string(),
            r.complexity.to_string(),
            r.dropout.to_string(),
            r.empirical.to_string(),
            r.psi.to_string(),
            r.corrected.to_string(),
            r.significant.to_string(),
        ])
        .expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
}

pub const SAR_MIN_N: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SarResult {
    pub slope: f64,
    pub intercept: f64,
    pub model_mae: f64,
    pub baseline_mae: f64,
    pub psi: f64,
    pub corrected_model: f64,
    pub corrected_baseline: f64,
    pub relevant: bool,
    /// Constant predictor or response; never relevant.
    pub degenerate: bool,
}

fn z_score(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * m.abs().max(1.0)) {
        return None;
    }
    Some(v.iter().map(|x| (x - m) / sd).collect())
}

/// Agnostic relevance of `x` for predicting `y` at confidence `1 − δ`.
///
/// `y` is z-scored first so absolute-error risks are in units of its spread
/// and comparable with Ψ.
pub fn sar_relevance(x: &[f64], y: &[f64], delta: f64) -> Result<SarResult, ValidationError> {
    if x.len() != y.len() {
        return Err(ValidationError::Length(x.len(), y.len()));
    }
    let n = x.len();
    if n < SAR_MIN_N {
        return Err(ValidationError::SampleSize { need: SAR_MIN_N, got: n });
    }
    let psi = concentration_bound(n, delta, 1.0)?;
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let degenerate_result = |baseline_mae: f64| SarResult {
        slope: 0.0,
        intercept: 0.0,
        model_mae: baseline_mae,
        baseline_mae,
        psi,
        corrected_model: baseline_mae + psi,
        corrected_baseline: (baseline_mae - psi).max(0.0),
        relevant: false,
        degenerate: true,
    };
    let Some(yz) = z_score(y) else {
        return Ok(degenerate_result(0.0));
    };
    let baseline_mae = yz.iter().map(|v| v.abs()).sum::<f64>() / nf;
    if !(sxx > 1e-24 * mx.abs().max(1.0).powi(2) * nf) {
        return Ok(degenerate_result(baseline_mae));
    }
    let sxy: f64 = x.iter().zip(&yz).map(|(a, b)| (a - mx) * b).sum();
    let slope = sxy / sxx;
    let intercept = -slope * mx;
    let model_mae = x.iter().zip(&yz).map(|(a, b)| (b - (slope * a + intercept)).abs()).sum::<f64>() / nf;
    let corrected_model = model_mae + psi;
    let corrected_baseline = (baseline_mae - psi).max(0.0);
    Ok(SarResult {
        slope,
        intercept,
        model_mae,
        baseline_mae,
        psi,
        corrected_model,
        corrected_baseline,
        relevant: corrected_model < corrected_baseline,
        degenerate: false,
    })
}

pub fn sar_csv(rows: &[(String, usize, f64, SarResult)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "context",
        "n",
        "delta",
        "C",
        "eta",
        "empirical",
        "psi",
        "corrected",
        "significant",
        "model_mae",
        "baseline_mae",
        "relevant",
    ])
    .expect("in-memory");
    for (ctx, n, delta, s) in rows {
        w.write_record([
            ctx.clone(),
            n.to_string(),
            delta.to_string(),
            "1".to_string(),
            "0".to_string(),
            s.model_mae.to_string(),
            s.psi.to_string(),
            s.corrected_model.to_string(),
            s.relevant.to_string(),
            s.model_mae.to_string(),
            s.baseline_mae.to_string(),
            s.relevant.to_string(),
        ])
        .expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    PValue,
    Sar,
}

/// Keeps the rows of `table` that pass the chosen filter, in their original
/// order. `data(row)` returns the paired samples behind a row. In SAR mode δ
/// is split evenly over the rows of the table.
pub fn correct_table<'a, F>(
    table: &CorrelationTable,
    mode: CorrectionMode,
    delta: f64,
    mut data: F,
) -> Result<CorrelationTable, ValidationError>
where
    F: FnMut(&CorrelationResult) -> (Vec<f64>, Vec<f64>) + 'a,
{
    let mut out = CorrelationTable {
        results: Vec::new(),
        skipped_classes: table.skipped_classes.clone(),
        provenance: table.provenance.clone(),
    };
    out.provenance.insert(
        "correction".into(),
        match mode {
            CorrectionMode::PValue => "pvalue".into(),
            CorrectionMode::Sar => "sar".into(),
        },
    );
    let pair_delta = delta / table.results.len().max(1) as f64;
    for row in &table.results {
        let keep = match mode {
            CorrectionMode::PValue => row.is_significant(0.05),
            CorrectionMode::Sar => {
                if row.r.is_none() || row.n < SAR_MIN_N {
                    false
                } else {
                    let (x, y) = data(row);
                    sar_relevance(&x, &y, pair_delta)?.relevant
                }
            }
        };
        if keep {
            out.results.push(row.clone());
        }
    }
    Ok(out)
}
