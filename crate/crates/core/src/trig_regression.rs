//! Least-squares trigonometric regression, exhaustive harmonic subset
//! selection and the two-step (long period first) pipeline.
//!
//! Regressors for harmonic `j` of period `p` are `cos(w j n)` and
//! `sin(w j n)`, `w = 2 pi / p`, `n = 1..N`; the sine is dropped when it
//! vanishes identically (`j = p/2`, `p` an even integer).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::components::{available_terms, ModelSpec};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitConfig, FitReport};
use crate::state_space::HarmonicTerm;
use crate::timeseries::{subtract_series, TimeSeries};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Singular-value ratio below which a design counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Largest subset search allowed: `2^SUBSET_GUARD` candidates.
pub const SUBSET_GUARD: usize = 20;

fn sine_vanishes(period: f64, j: u32) -> bool {
    (period - 2.0 * j as f64).abs() < 1e-9
}

fn max_harmonic(period: f64) -> u32 {
    (period / 2.0 + 1e-9).floor() as u32
}

fn check_harmonics(period: f64, harmonics: &[u32]) -> Result<()> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::invalid(format!("period must be positive, got {period}")));
    }
    let max = max_harmonic(period);
    for w in harmonics.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invalid("harmonic indices must be strictly increasing"));
        }
    }
    if let Some(&j) = harmonics.iter().find(|&&j| j == 0 || j > max) {
        return Err(Error::invalid(format!("harmonic {j} outside 1..={max} for period {period}")));
    }
    Ok(())
}

fn harmonic_terms(period: f64, harmonics: &[u32]) -> Vec<HarmonicTerm> {
    let mut terms = Vec::with_capacity(2 * harmonics.len());
    for &j in harmonics {
        terms.push(HarmonicTerm::Cos(j));
        if !sine_vanishes(period, j) {
            terms.push(HarmonicTerm::Sin(j));
        }
    }
    terms
}

fn check_terms(period: f64, terms: &[HarmonicTerm]) -> Result<()> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::invalid(format!("period must be positive, got {period}")));
    }
    let max = max_harmonic(period);
    for (i, t) in terms.iter().enumerate() {
        let ok = match *t {
            HarmonicTerm::Level => false,
            HarmonicTerm::Cos(j) => j >= 1 && j <= max,
            HarmonicTerm::Sin(j) => j >= 1 && j <= max && !sine_vanishes(period, j),
        };
        if !ok || terms[..i].contains(t) {
            return Err(Error::invalid(format!("invalid regressor {t:?} for period {period}")));
        }
    }
    Ok(())
}

fn with_intercept(terms: &[HarmonicTerm], intercept: bool) -> Vec<HarmonicTerm> {
    let mut cols = Vec::with_capacity(terms.len() + 1);
    if intercept {
        cols.push(HarmonicTerm::Level);
    }
    cols.extend_from_slice(terms);
    cols
}

fn design(rows: impl Iterator<Item = usize>, period: f64, cols: &[HarmonicTerm]) -> DMatrix<f64> {
    let omega = std::f64::consts::TAU / period;
    let rows: Vec<usize> = rows.collect();
    DMatrix::from_fn(rows.len(), cols.len(), |i, c| cols[c].eval(omega, rows[i]))
}

/// `n_rows x (intercept + cos/sin per harmonic)` design for `n = 1..n_rows`.
pub fn design_matrix(n_rows: usize, period: f64, harmonics: &[u32], intercept: bool) -> Result<DMatrix<f64>> {
    check_harmonics(period, harmonics)?;
    term_design_matrix(n_rows, period, &harmonic_terms(period, harmonics), intercept)
}

/// Design over an explicit list of regressors.
pub fn term_design_matrix(n_rows: usize, period: f64, terms: &[HarmonicTerm], intercept: bool) -> Result<DMatrix<f64>> {
    if n_rows == 0 {
        return Err(Error::invalid("design needs at least one row"));
    }
    if terms.is_empty() && !intercept {
        return Err(Error::invalid("empty design: no harmonics and no intercept"));
    }
    check_terms(period, terms)?;
    Ok(design(1..=n_rows, period, &with_intercept(terms, intercept)))
}

/// `(c_j, d_j)` for one harmonic; a term left out of the fit is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarmonicCoefficients {
    pub j: u32,
    pub cos: f64,
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigRegressionFit {
    pub period: f64,
    /// Regressors besides the intercept, in design order.
    pub terms: Vec<HarmonicTerm>,
    pub intercept: f64,
    /// Aligned with `terms`.
    pub term_coefficients: Vec<f64>,
    /// Per harmonic, increasing `j`.
    pub coefficients: Vec<HarmonicCoefficients>,
    /// Number of regression coefficients, intercept included.
    pub n_coefficients: usize,
    pub rss: f64,
    pub sigma2_hat: f64,
    pub aic: f64,
    pub n_obs: usize,
    #[serde(skip)]
    pub fitted_curve: Vec<f64>,
}

impl TrigRegressionFit {
    /// Number of trigonometric regressors (the intercept is not counted).
    pub fn order(&self) -> usize {
        self.terms.len()
    }

    /// Curve value at time index `n` (1-based; may lie past the data).
    pub fn evaluate(&self, n: usize) -> f64 {
        let omega = std::f64::consts::TAU / self.period;
        self.intercept
            + self
                .terms
                .iter()
                .zip(&self.term_coefficients)
                .map(|(t, c)| c * t.eval(omega, n))
                .sum::<f64>()
    }

    /// Curve for `n = 1..=len`.
    pub fn curve(&self, len: usize) -> Vec<f64> {
        (1..=len).map(|n| self.evaluate(n)).collect()
    }

    /// Harmonic part only (intercept excluded), e.g. as a one-factor curve.
    pub fn harmonic_curve(&self, len: usize) -> Vec<f64> {
        (1..=len).map(|n| self.evaluate(n) - self.intercept).collect()
    }
}

/// `N log(2 pi sigma^2) + N + 2 (q + 1)`.
pub fn regression_aic(n_obs: usize, sigma2: f64, n_coefficients: usize) -> f64 {
    let n = n_obs as f64;
    n * (LN_2PI + sigma2.ln()) + n + 2.0 * (n_coefficients as f64 + 1.0)
}

/// Least squares on an intercept plus `terms`. Missing observations are left
/// out of the fit; the curve covers every index.
pub fn fit_terms(ts: &TimeSeries, period: f64, terms: &[HarmonicTerm]) -> Result<TrigRegressionFit> {
    check_terms(period, terms)?;
    let cols = with_intercept(terms, true);
    let rows: Vec<(usize, f64)> = ts.observed_iter().collect();
    let q = cols.len();
    if rows.len() <= q {
        return Err(Error::invalid(format!(
            "{} observed points for {q} regression coefficients",
            rows.len()
        )));
    }
    let x = design(rows.iter().map(|r| r.0 + 1), period, &cols);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let beta = least_squares(x.clone(), &y)?;

    let rss = (&y - &x * &beta).norm_squared();
    let n_obs = rows.len();
    let sigma2_hat = rss / n_obs as f64;

    let term_coefficients: Vec<f64> = beta.iter().skip(1).copied().collect();
    let mut coefficients: Vec<HarmonicCoefficients> = Vec::new();
    let mut by_j: Vec<(&HarmonicTerm, f64)> = terms.iter().zip(term_coefficients.iter().copied()).collect();
    by_j.sort_by_key(|(t, _)| t.harmonic());
    for (t, c) in by_j {
        let j = t.harmonic();
        if coefficients.last().is_none_or(|h| h.j != j) {
            coefficients.push(HarmonicCoefficients { j, cos: 0.0, sin: 0.0 });
        }
        let h = coefficients.last_mut().expect("pushed above");
        match t {
            HarmonicTerm::Sin(_) => h.sin = c,
            _ => h.cos = c,
        }
    }
    let mut fit = TrigRegressionFit {
        period,
        terms: terms.to_vec(),
        intercept: beta[0],
        term_coefficients,
        coefficients,
        n_coefficients: q,
        rss,
        sigma2_hat,
        aic: regression_aic(n_obs, sigma2_hat, q),
        n_obs,
        fitted_curve: Vec::new(),
    };
    fit.fitted_curve = fit.curve(ts.len());
    Ok(fit)
}

/// Fit on whole harmonics: `cos` and (non-vanishing) `sin` for each `j`.
pub fn fit_harmonics(ts: &TimeSeries, period: f64, harmonics: &[u32]) -> Result<TrigRegressionFit> {
    check_harmonics(period, harmonics)?;
    fit_terms(ts, period, &harmonic_terms(period, harmonics))
}

/// Fit with harmonics `1..=k` (`2k + 1` coefficients unless a sine vanishes).
pub fn fit_ols(ts: &TimeSeries, period: f64, k: u32) -> Result<TrigRegressionFit> {
    let harmonics: Vec<u32> = (1..=k).collect();
    fit_harmonics(ts, period, &harmonics)
}

/// Fit with the first `order` regressors of `cos 1, sin 1, cos 2, sin 2, ...`.
pub fn fit_order(ts: &TimeSeries, period: f64, order: usize) -> Result<TrigRegressionFit> {
    let all = available_terms(period);
    if order > all.len() {
        return Err(Error::invalid(format!(
            "order {order} exceeds the {} regressors of period {period}",
            all.len()
        )));
    }
    fit_terms(ts, period, &all[..order])
}

/// Householder QR solve with a singular-value rank check.
fn least_squares(x: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.qr();
    let r = qr.r();
    // R shares the singular values of X and is only q x q
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > RANK_TOLERANCE * smax) {
        let rmax = r.diagonal().amax();
        let column = (0..r.ncols())
            .find(|&i| !(r[(i, i)].abs() > RANK_TOLERANCE * rmax))
            .unwrap_or(r.ncols() - 1);
        return Err(Error::RankDeficient { column, singular_value: smin });
    }
    let rhs = qr.q().transpose() * y;
    r.solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { column: 0, singular_value: smin })
}

/// Best subset of one size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeSummary {
    pub size: usize,
    /// 1-based positions in `cos 1, sin 1, cos 2, ...`.
    pub variables: Vec<u32>,
    pub terms: Vec<HarmonicTerm>,
    pub sigma2_hat: f64,
    pub aic: f64,
    /// `C(max_order, size)`
    pub n_models: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetSelection {
    pub best: TrigRegressionFit,
    /// Sizes `0..=max_order`.
    pub by_size: Vec<SizeSummary>,
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Exhaustive search over subsets of the first `max_order` regressors
/// (`cos 1, sin 1, cos 2, ...`), intercept always included. Ties keep the
/// lexicographically first subset.
pub fn subset_select(ts: &TimeSeries, period: f64, max_order: usize) -> Result<SubsetSelection> {
    if max_order > SUBSET_GUARD {
        return Err(Error::SubsetGuard(max_order));
    }
    let all = available_terms(period);
    if max_order > all.len() {
        return Err(Error::invalid(format!(
            "max_order {max_order} exceeds the {} regressors of period {period}",
            all.len()
        )));
    }
    let by_size: Vec<(SizeSummary, TrigRegressionFit)> = (0..=max_order)
        .into_par_iter()
        .map(|size| -> Result<(SizeSummary, TrigRegressionFit)> {
            let mut best: Option<(Vec<u32>, TrigRegressionFit)> = None;
            let mut count = 0u64;
            for subset in subsets_of_size(max_order as u32, size) {
                count += 1;
                let terms: Vec<HarmonicTerm> = subset.iter().map(|&v| all[v as usize - 1]).collect();
                let fit = fit_terms(ts, period, &terms)?;
                if best.as_ref().is_none_or(|(_, b)| fit.aic < b.aic) {
                    best = Some((subset, fit));
                }
            }
            let (variables, best) = best.expect("every size has at least one subset");
            Ok((
                SizeSummary {
                    size,
                    variables,
                    terms: best.terms.clone(),
                    sigma2_hat: best.sigma2_hat,
                    aic: best.aic,
                    n_models: count,
                },
                best,
            ))
        })
        .collect::<Result<_>>()?;
    let best = by_size
        .iter()
        .map(|(_, f)| f)
        .fold(None::<&TrigRegressionFit>, |acc, f| match acc {
            Some(b) if b.aic <= f.aic => Some(b),
            _ => Some(f),
        })
        .cloned()
        .expect("size 0 always exists");
    Ok(SubsetSelection { best, by_size: by_size.into_iter().map(|(s, _)| s).collect() })
}

/// Subsets of `1..=max` with `size` elements in lexicographic order.
fn subsets_of_size(max: u32, size: usize) -> impl Iterator<Item = Vec<u32>> {
    let mut next: Option<Vec<u32>> = if size as u32 <= max { Some((1..=size as u32).collect()) } else { None };
    std::iter::from_fn(move || {
        let cur = next.take()?;
        let mut succ = cur.clone();
        let k = succ.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if succ[i] < max - (k - 1 - i) as u32 {
                succ[i] += 1;
                for t in i + 1..k {
                    succ[t] = succ[t - 1] + 1;
                }
                next = Some(succ);
                break;
            }
        }
        Some(cur)
    })
}

/// `AIC + 2(2k + 1)`: the regression stage's intercept and `k` cosine/sine
/// pairs added to the penalty.
pub fn aic_prime(aic: f64, k: u32) -> f64 {
    aic + 2.0 * (2.0 * k as f64 + 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoStepFit {
    pub regression: TrigRegressionFit,
    #[serde(skip)]
    pub residual: TimeSeries,
    pub stage2: FitReport,
    pub aic: f64,
    pub aic_prime: f64,
    pub k: u32,
}

/// Removes the order-`k` long-period curve, then fits `spec` to the residual.
pub fn two_step_fit(
    ts: &TimeSeries,
    long_period: f64,
    k: u32,
    spec: &ModelSpec,
    config: &FitConfig,
) -> Result<TwoStepFit> {
    if k == 0 {
        return Err(Error::invalid("two-step fit needs k >= 1"));
    }
    let regression = fit_ols(ts, long_period, k)?;
    let residual = subtract_series(ts, &regression.fitted_curve)?;
    let stage2 = fit_mle(spec, &residual, config)?;
    let aic = stage2.aic;
    Ok(TwoStepFit { aic_prime: aic_prime(aic, k), regression, residual, stage2, aic, k })
}
