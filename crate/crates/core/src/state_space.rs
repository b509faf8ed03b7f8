//! Linear-Gaussian state-space engine.
//!
//! ```text
//! x_n = F x_{n-1} + G v_n,   v_n ~ N(0, Q)   (Q diagonal)
//! y_n = H_n x_n + w_n,       w_n ~ N(0, R)
//! x_0 ~ N(x0, V0)
//! ```
//!
//! Time indices are 1-based as in the model equations: the first observation
//! is `n = 1` and is predicted from `(x0, V0)`. The observation row `H_n` may
//! vary with `n` (trigonometric regressors, scaled curves).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

/// Multiplier for the default proper prior `V0 = kappa * I`,
/// `kappa = DIFFUSE_SCALE * var(y)`.
pub const DIFFUSE_SCALE: f64 = 1e7;

/// One regressor of a trigonometric row segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum HarmonicTerm {
    /// `cos(0) = 1`, a level carried inside a trigonometric block.
    Level,
    Cos(u32),
    Sin(u32),
}

impl HarmonicTerm {
    pub fn harmonic(&self) -> u32 {
        match *self {
            HarmonicTerm::Level => 0,
            HarmonicTerm::Cos(j) | HarmonicTerm::Sin(j) => j,
        }
    }

    pub fn eval(&self, omega: f64, n: usize) -> f64 {
        match *self {
            HarmonicTerm::Level => 1.0,
            HarmonicTerm::Cos(j) => (omega * j as f64 * n as f64).cos(),
            HarmonicTerm::Sin(j) => (omega * j as f64 * n as f64).sin(),
        }
    }
}

/// A contiguous piece of the observation row.
#[derive(Debug, Clone, PartialEq)]
pub enum RowSegment {
    /// Time-invariant entries.
    Fixed(Vec<f64>),
    /// `cos(omega j n)` / `sin(omega j n)` regressors.
    Harmonics { omega: f64, terms: Vec<HarmonicTerm> },
    /// Single entry equal to `values[n - 1]`.
    Curve(Arc<[f64]>),
    /// Row `n - 1` of the table.
    Table(Arc<DMatrix<f64>>),
}

impl RowSegment {
    pub fn dim(&self) -> usize {
        match self {
            RowSegment::Fixed(v) => v.len(),
            RowSegment::Harmonics { terms, .. } => terms.len(),
            RowSegment::Curve(_) => 1,
            RowSegment::Table(t) => t.ncols(),
        }
    }

    /// Last time index for which the segment is defined.
    pub fn defined_until(&self) -> Option<usize> {
        match self {
            RowSegment::Fixed(_) | RowSegment::Harmonics { .. } => None,
            RowSegment::Curve(c) => Some(c.len()),
            RowSegment::Table(t) => Some(t.nrows()),
        }
    }

    fn fill(&self, n: usize, out: &mut [f64]) {
        match self {
            RowSegment::Fixed(v) => out.copy_from_slice(v),
            RowSegment::Harmonics { omega, terms } => {
                for (o, t) in out.iter_mut().zip(terms) {
                    *o = t.eval(*omega, n);
                }
            }
            RowSegment::Curve(c) => out[0] = c[n - 1],
            RowSegment::Table(t) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = t[(n - 1, j)];
                }
            }
        }
    }
}

/// Observation row provider `n -> H_n`, the concatenation of its segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationRow {
    segments: Vec<RowSegment>,
}

impl ObservationRow {
    pub fn new(segments: Vec<RowSegment>) -> Self {
        Self { segments }
    }

    pub fn fixed(row: Vec<f64>) -> Self {
        Self::new(vec![RowSegment::Fixed(row)])
    }

    pub fn segments(&self) -> &[RowSegment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.segments.iter().map(RowSegment::dim).sum()
    }

    pub fn defined_until(&self) -> Option<usize> {
        self.segments.iter().filter_map(RowSegment::defined_until).min()
    }

    /// Writes `H_n` into `out` (length `dim`).
    pub fn fill(&self, n: usize, out: &mut [f64]) -> Result<()> {
        if n == 0 || self.defined_until().is_some_and(|m| n > m) {
            return Err(Error::model(format!("observation row undefined at n={n}")));
        }
        let mut offset = 0;
        for s in &self.segments {
            let d = s.dim();
            s.fill(n, &mut out[offset..offset + d]);
            offset += d;
        }
        Ok(())
    }

    pub fn at(&self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.fill(n, &mut out)?;
        Ok(out)
    }

    /// Precomputes rows `1..=n_max` into a single table segment.
    pub fn materialize(&self, n_max: usize) -> Result<Self> {
        let d = self.dim();
        let mut table = DMatrix::zeros(n_max, d);
        let mut buf = vec![0.0; d];
        for n in 1..=n_max {
            self.fill(n, &mut buf)?;
            for (j, v) in buf.iter().enumerate() {
                table[(n - 1, j)] = *v;
            }
        }
        Ok(Self::new(vec![RowSegment::Table(Arc::new(table))]))
    }
}

/// Row-compressed copy of the transition matrix.
#[derive(Debug, Clone, PartialEq)]
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    transition: DMatrix<f64>,
    noise_loading: DMatrix<f64>,
    noise_variances: DVector<f64>,
    observation_variance: f64,
    observation: ObservationRow,
    initial_mean: DVector<f64>,
    initial_cov: DMatrix<f64>,
    sparse_transition: SparseRows,
    system_cov: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Assembles and validates a model. `noise_variances` is the diagonal of `Q`.
    pub fn new(
        transition: DMatrix<f64>,
        noise_loading: DMatrix<f64>,
        noise_variances: DVector<f64>,
        observation_variance: f64,
        observation: ObservationRow,
        initial_mean: DVector<f64>,
        initial_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d = transition.nrows();
        if transition.ncols() != d {
            return Err(Error::model("transition matrix must be square"));
        }
        if noise_loading.nrows() != d || noise_loading.ncols() != noise_variances.len() {
            return Err(Error::model(format!(
                "noise loading is {}x{}, expected {}x{}",
                noise_loading.nrows(),
                noise_loading.ncols(),
                d,
                noise_variances.len()
            )));
        }
        if noise_variances.len() > d {
            return Err(Error::model("more noise terms than state dimensions"));
        }
        if observation.dim() != d {
            return Err(Error::model(format!(
                "observation row has length {}, state has dimension {d}",
                observation.dim()
            )));
        }
        if initial_mean.len() != d || initial_cov.nrows() != d || initial_cov.ncols() != d {
            return Err(Error::model("initial state dimensions do not match"));
        }
        if !(observation_variance >= 0.0) || !observation_variance.is_finite() {
            return Err(Error::model("observation variance must be finite and non-negative"));
        }
        if noise_variances.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::model("system noise variances must be finite and non-negative"));
        }
        for i in 0..d {
            if !(initial_cov[(i, i)] >= 0.0) {
                return Err(Error::model("initial covariance has a negative diagonal entry"));
            }
            for j in 0..i {
                let (a, b) = (initial_cov[(i, j)], initial_cov[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::model("initial covariance is not symmetric"));
                }
            }
        }
        let system_cov = &noise_loading
            * DMatrix::from_diagonal(&noise_variances)
            * noise_loading.transpose();
        let sparse_transition = SparseRows::from_dense(&transition);
        Ok(Self {
            transition,
            noise_loading,
            noise_variances,
            observation_variance,
            observation,
            initial_mean,
            initial_cov,
            sparse_transition,
            system_cov,
        })
    }

    pub fn dim_state(&self) -> usize {
        self.transition.nrows()
    }

    pub fn dim_noise(&self) -> usize {
        self.noise_variances.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn noise_loading(&self) -> &DMatrix<f64> {
        &self.noise_loading
    }

    pub fn noise_variances(&self) -> &DVector<f64> {
        &self.noise_variances
    }

    pub fn observation_variance(&self) -> f64 {
        self.observation_variance
    }

    pub fn observation(&self) -> &ObservationRow {
        &self.observation
    }

    pub fn initial_mean(&self) -> &DVector<f64> {
        &self.initial_mean
    }

    pub fn initial_cov(&self) -> &DMatrix<f64> {
        &self.initial_cov
    }

    pub fn with_observation_variance(mut self, r: f64) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::model("observation variance must be finite and non-negative"));
        }
        self.observation_variance = r;
        Ok(self)
    }

    pub fn with_initial_state(self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.transition,
            self.noise_loading,
            self.noise_variances,
            self.observation_variance,
            self.observation,
            mean,
            cov,
        )
    }

    pub fn with_observation(self, observation: ObservationRow) -> Result<Self> {
        Self::new(
            self.transition,
            self.noise_loading,
            self.noise_variances,
            self.observation_variance,
            observation,
            self.initial_mean,
            self.initial_cov,
        )
    }

    /// `x0 = 0`, `V0 = DIFFUSE_SCALE * var(y) * I` (falls back to `mean(y^2)`
    /// and then 1 when the observed variance is zero).
    pub fn with_default_prior(self, ts: &TimeSeries) -> Result<Self> {
        let d = self.dim_state();
        let mut scale = ts.observed_variance();
        if !(scale > 0.0) {
            scale = ts.observed_mean_square();
        }
        if !(scale > 0.0) {
            scale = 1.0;
        }
        self.with_initial_state(
            DVector::zeros(d),
            DMatrix::identity(d, d) * (DIFFUSE_SCALE * scale),
        )
    }

    /// `x <- F x`
    fn propagate_mean(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.sparse_transition.rows) {
            *o = row.iter().map(|&(k, f)| f * x[k]).sum();
        }
    }

    /// `P <- F P F' + G Q G'` (column-major buffers), symmetrized.
    fn propagate_cov(&self, p: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let d = self.dim_state();
        let rows = &self.sparse_transition.rows;
        // scratch = F P
        for (i, row) in rows.iter().enumerate() {
            for j in 0..d {
                scratch[j * d + i] = row.iter().map(|&(k, f)| f * p[j * d + k]).sum();
            }
        }
        // out = scratch F'
        for (j, row) in rows.iter().enumerate() {
            for i in 0..d {
                out[j * d + i] = row.iter().map(|&(k, f)| f * scratch[k * d + i]).sum::<f64>()
                    + self.system_cov[(i, j)];
            }
        }
        symmetrize(out, d);
    }
}

fn symmetrize(p: &mut [f64], d: usize) {
    for j in 0..d {
        for i in 0..j {
            let m = 0.5 * (p[j * d + i] + p[i * d + j]);
            p[j * d + i] = m;
            p[i * d + j] = m;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Innovation {
    /// `y_n - H_n x_{n|n-1}`
    pub error: f64,
    /// `R + H_n V_{n|n-1} H_n'`
    pub variance: f64,
}

/// Output of [`kalman_filter`]. Vectors are indexed by `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub innovations: Vec<Option<Innovation>>,
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
    pub n_observed: usize,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.filtered_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered_means.is_empty()
    }
}

/// Likelihood pieces without stored state trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodSummary {
    pub log_likelihood: f64,
    /// `sum log r_n` over observed n.
    pub sum_log_variance: f64,
    /// `sum eps_n^2 / r_n` over observed n.
    pub sum_standardized_sq: f64,
    pub n_observed: usize,
}

struct Step<'a> {
    predicted_mean: &'a [f64],
    predicted_cov: &'a [f64],
    filtered_mean: &'a [f64],
    filtered_cov: &'a [f64],
    innovation: Option<Innovation>,
}

fn run_filter(
    model: &StateSpaceModel,
    ts: &TimeSeries,
    mut visit: impl FnMut(Step<'_>),
) -> Result<LikelihoodSummary> {
    let d = model.dim_state();
    if let Some(limit) = model.observation.defined_until() {
        if limit < ts.len() {
            return Err(Error::model(format!(
                "observation row defined up to n={limit}, series has {} points",
                ts.len()
            )));
        }
    }
    let mut x = model.initial_mean.as_slice().to_vec();
    let mut p = model.initial_cov.as_slice().to_vec();
    let mut xp = vec![0.0; d];
    let mut pp = vec![0.0; d * d];
    let mut scratch = vec![0.0; d * d];
    let mut h = vec![0.0; d];
    let mut ph = vec![0.0; d];
    let r_obs = model.observation_variance;

    let mut sum_log = 0.0;
    let mut sum_sq = 0.0;
    let mut n_obs = 0usize;

    for i in 0..ts.len() {
        let n = i + 1;
        model.propagate_mean(&x, &mut xp);
        model.propagate_cov(&p, &mut scratch, &mut pp);

        let innovation = match ts.get(i) {
            None => {
                x.copy_from_slice(&xp);
                p.copy_from_slice(&pp);
                None
            }
            Some(y) => {
                model.observation.fill(n, &mut h)?;
                for (r, o) in ph.iter_mut().enumerate() {
                    *o = (0..d).map(|k| pp[k * d + r] * h[k]).sum();
                }
                let var = r_obs + h.iter().zip(&ph).map(|(a, b)| a * b).sum::<f64>();
                let err = y - h.iter().zip(&xp).map(|(a, b)| a * b).sum::<f64>();
                if !var.is_finite() || !err.is_finite() {
                    return Err(Error::NonFinite { stage: "filter", n });
                }
                if var <= 0.0 {
                    return Err(Error::NonPositiveVariance { n, variance: var });
                }
                let gain = err / var;
                for k in 0..d {
                    x[k] = xp[k] + ph[k] * gain;
                }
                for c in 0..d {
                    let s = ph[c] / var;
                    for r in 0..d {
                        p[c * d + r] = pp[c * d + r] - ph[r] * s;
                    }
                }
                symmetrize(&mut p, d);
                sum_log += var.ln();
                sum_sq += err * err / var;
                n_obs += 1;
                Some(Innovation { error: err, variance: var })
            }
        };
        visit(Step {
            predicted_mean: &xp,
            predicted_cov: &pp,
            filtered_mean: &x,
            filtered_cov: &p,
            innovation,
        });
    }

    let log_likelihood =
        -0.5 * (n_obs as f64 * (2.0 * std::f64::consts::PI).ln() + sum_log + sum_sq);
    if !log_likelihood.is_finite() {
        return Err(Error::NonFinite { stage: "log-likelihood", n: ts.len() });
    }
    Ok(LikelihoodSummary {
        log_likelihood,
        sum_log_variance: sum_log,
        sum_standardized_sq: sum_sq,
        n_observed: n_obs,
    })
}

/// Forward pass with stored one-step predictions and filtered moments.
/// Missing observations skip the update and add nothing to the likelihood.
pub fn kalman_filter(model: &StateSpaceModel, ts: &TimeSeries) -> Result<FilterResult> {
    let d = model.dim_state();
    let n = ts.len();
    let mut out = FilterResult {
        innovations: Vec::with_capacity(n),
        predicted_means: Vec::with_capacity(n),
        predicted_covs: Vec::with_capacity(n),
        filtered_means: Vec::with_capacity(n),
        filtered_covs: Vec::with_capacity(n),
        log_likelihood: 0.0,
        n_observed: 0,
    };
    let summary = run_filter(model, ts, |s| {
        out.innovations.push(s.innovation);
        out.predicted_means.push(DVector::from_column_slice(s.predicted_mean));
        out.predicted_covs.push(DMatrix::from_column_slice(d, d, s.predicted_cov));
        out.filtered_means.push(DVector::from_column_slice(s.filtered_mean));
        out.filtered_covs.push(DMatrix::from_column_slice(d, d, s.filtered_cov));
    })?;
    out.log_likelihood = summary.log_likelihood;
    out.n_observed = summary.n_observed;
    Ok(out)
}

/// Log-likelihood only; no per-step storage.
pub fn log_likelihood(model: &StateSpaceModel, ts: &TimeSeries) -> Result<LikelihoodSummary> {
    run_filter(model, ts, |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Set when some backward gain needed the pseudo-inverse.
    pub used_pseudo_inverse: bool,
}

/// Inverse of a symmetric PSD matrix; falls back to a Moore-Penrose
/// pseudo-inverse (eigenvalues below `1e-12 * max diag` dropped).
fn psd_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = m.nrows();
    let max_diag = (0..d).map(|i| m[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag;
    if let Some(chol) = m.clone().cholesky() {
        let l = chol.l_dirty();
        if (0..d).all(|i| l[(i, i)] * l[(i, i)] > tol) {
            return (chol.inverse(), false);
        }
    }
    let eig = m.clone().symmetric_eigen();
    let inv_vals = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&inv_vals) * v.transpose(), true)
}

/// Fixed-interval (Rauch-Tung-Striebel) smoother.
pub fn kalman_smooth(model: &StateSpaceModel, filtered: &FilterResult) -> Result<SmoothResult> {
    let len = filtered.len();
    if len == 0 {
        return Ok(SmoothResult { means: vec![], covs: vec![], used_pseudo_inverse: false });
    }
    if filtered.predicted_means.len() != len || filtered.filtered_means[0].len() != model.dim_state() {
        return Err(Error::model("filter result does not match the model"));
    }
    let mut means = filtered.filtered_means.clone();
    let mut covs = filtered.filtered_covs.clone();
    let mut used_pinv = false;
    let ft = model.transition.transpose();
    for i in (0..len - 1).rev() {
        let (inv, pinv) = psd_inverse(&filtered.predicted_covs[i + 1]);
        used_pinv |= pinv;
        let gain = &filtered.filtered_covs[i] * &ft * inv;
        let dm = &means[i + 1] - &filtered.predicted_means[i + 1];
        let dc = &covs[i + 1] - &filtered.predicted_covs[i + 1];
        means[i] = &filtered.filtered_means[i] + &gain * dm;
        let mut c = &filtered.filtered_covs[i] + &gain * dc * gain.transpose();
        let d = c.nrows();
        symmetrize(c.as_mut_slice(), d);
        covs[i] = c;
        if means[i].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { stage: "smoother", n: i + 1 });
        }
    }
    Ok(SmoothResult { means, covs, used_pseudo_inverse: used_pinv })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Forecast {
    /// Absolute time index (`N + step`).
    pub n: usize,
    pub step: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Multi-step observation forecasts from the end of the filtered series.
pub fn predict(model: &StateSpaceModel, filtered: &FilterResult, horizon: usize) -> Result<Vec<Forecast>> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let len = filtered.len();
    if len == 0 {
        return Err(Error::invalid("empty filter result"));
    }
    if let Some(limit) = model.observation.defined_until() {
        if limit < len + horizon {
            return Err(Error::model(format!(
                "observation row defined up to n={limit}, forecast needs n={}",
                len + horizon
            )));
        }
    }
    let d = model.dim_state();
    let mut x = filtered.filtered_means[len - 1].as_slice().to_vec();
    let mut p = filtered.filtered_covs[len - 1].as_slice().to_vec();
    let mut xn = vec![0.0; d];
    let mut pn = vec![0.0; d * d];
    let mut scratch = vec![0.0; d * d];
    let mut h = vec![0.0; d];
    let mut out = Vec::with_capacity(horizon);
    for step in 1..=horizon {
        let n = len + step;
        model.propagate_mean(&x, &mut xn);
        model.propagate_cov(&p, &mut scratch, &mut pn);
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut p, &mut pn);
        model.observation.fill(n, &mut h)?;
        let mean = h.iter().zip(&x).map(|(a, b)| a * b).sum();
        let mut var = model.observation_variance;
        for c in 0..d {
            for r in 0..d {
                var += h[r] * p[c * d + r] * h[c];
            }
        }
        out.push(Forecast { n, step, mean, variance: var });
    }
    Ok(out)
}
