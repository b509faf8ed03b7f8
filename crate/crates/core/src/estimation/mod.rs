//! Maximum-likelihood fitting, AIC and order sweeps.
//!
//! The observation variance is concentrated out: every candidate is filtered
//! in units of `sigma^2` (`R = 1`, `Q = tau^2 / sigma^2`), after which
//! `sigma^2 = (1/N) sum eps_n^2 / r_n` is available in closed form. The
//! initial covariance is tied to `sigma^2` as well,
//! `V0 = kappa * sigma^2 * I` with the dimensionless
//! `kappa = DIFFUSE_SCALE * mean(y^2) / var(y)`, so the profile is exact.

pub mod nelder_mead;
pub mod transform;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::components::{compose, CoefficientDynamics, ComposedModel, ModelSpec};
use crate::error::{Error, Result};
use crate::state_space::{log_likelihood, ObservationRow, DIFFUSE_SCALE};
use crate::timeseries::TimeSeries;

pub use nelder_mead::{minimize, Minimum, NelderMeadConfig};
pub use transform::ParamTransform;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `1` if `m > 0`, else `0`.
pub fn id(m: usize) -> usize {
    usize::from(m > 0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamCountRule {
    /// Free variances + `sigma^2` + AR coefficients + constant trig coefficients.
    #[default]
    Variances,
    /// `id(m1) + id(m2) + id(m3) + 1 + dim(x)`.
    PlusStateDim,
}

/// Number of estimated parameters under the default rule.
pub fn count_params(spec: &ModelSpec) -> usize {
    let mut k = id(spec.trend_order) + spec.m2() + id(spec.ar_order) + 1 + spec.ar_order;
    for t in &spec.trig {
        k += match t.dynamics {
            CoefficientDynamics::RandomWalk => 1,
            // fixed coefficients are regression parameters
            CoefficientDynamics::Constant => t.terms().map(|v| v.len()).unwrap_or(t.count.value()),
        };
    }
    k + usize::from(spec.one_factor.is_some())
}

pub fn count_params_with(spec: &ModelSpec, rule: ParamCountRule) -> Result<usize> {
    match rule {
        ParamCountRule::Variances => Ok(count_params(spec)),
        ParamCountRule::PlusStateDim => Ok(id(spec.trend_order)
            + spec.m2()
            + id(spec.ar_order)
            + 1
            + spec.state_dim()?),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitConfig {
    pub optimizer: NelderMeadConfig,
    pub count_rule: ParamCountRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedParam {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub spec: ModelSpec,
    pub label: String,
    /// `tau2_*` slots, then `sigma2`, then `a_1..a_m3`, all in original units.
    pub params: Vec<NamedParam>,
    pub variances: Vec<f64>,
    pub ar_coefficients: Vec<f64>,
    pub sigma2: f64,
    /// Diagonal of `V0` for the fitted model.
    pub prior_variance: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub runtime_seconds: f64,
}

impl FitReport {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    /// The fitted model in original units.
    pub fn model(&self) -> Result<ComposedModel> {
        let composed = compose(&self.spec.blocks(&self.variances, &self.ar_coefficients)?)?;
        let d = composed.model.dim_state();
        let model = composed
            .model
            .with_observation_variance(self.sigma2)?
            .with_initial_state(DVector::zeros(d), DMatrix::identity(d, d) * self.prior_variance)?;
        Ok(ComposedModel { model, spans: composed.spans })
    }

    /// Same report ignoring wall-clock runtime.
    pub fn same_fit(&self, other: &FitReport) -> bool {
        let mut a = self.clone();
        a.runtime_seconds = other.runtime_seconds;
        a == *other
    }
}

/// `mean(y^2) / var(y)`-scaled multiplier for `V0 = kappa sigma^2 I`.
pub fn prior_scale(ts: &TimeSeries) -> f64 {
    let var = ts.observed_variance();
    let ms = ts.observed_mean_square();
    if var > 0.0 && ms > 0.0 {
        DIFFUSE_SCALE * ms / var
    } else {
        DIFFUSE_SCALE
    }
}

/// Profile likelihood at fixed variance ratios and AR coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub log_likelihood: f64,
    pub sigma2: f64,
    pub n_observed: usize,
}

struct Evaluator<'a> {
    spec: &'a ModelSpec,
    ts: &'a TimeSeries,
    row: ObservationRow,
    kappa: f64,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a ModelSpec, ts: &'a TimeSeries) -> Result<Self> {
        spec.validate()?;
        let zeros = vec![0.0; spec.variance_slots().len()];
        let composed = compose(&spec.blocks(&zeros, &vec![0.0; spec.ar_order])?)?;
        // one precomputed table instead of trig evaluations inside every filter pass
        let row = composed.model.observation().materialize(ts.len())?;
        Ok(Self { spec, ts, row, kappa: prior_scale(ts) })
    }

    fn profile(&self, ratios: &[f64], ar: &[f64]) -> Result<Profile> {
        let composed = compose(&self.spec.blocks(ratios, ar)?)?;
        let d = composed.model.dim_state();
        let model = composed
            .model
            .with_observation(self.row.clone())?
            .with_initial_state(DVector::zeros(d), DMatrix::identity(d, d) * self.kappa)?;
        let s = log_likelihood(&model, self.ts)?;
        let n = s.n_observed as f64;
        let sigma2 = s.sum_standardized_sq / n;
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::NonFinite { stage: "profile likelihood", n: s.n_observed });
        }
        let ll = -0.5 * (n * (LN_2PI + sigma2.ln()) + s.sum_log_variance + n);
        if !ll.is_finite() {
            return Err(Error::NonFinite { stage: "profile likelihood", n: s.n_observed });
        }
        Ok(Profile { log_likelihood: ll, sigma2, n_observed: s.n_observed })
    }
}

/// Concentrated log-likelihood at variance ratios `tau^2 / sigma^2` (ordered as
/// [`ModelSpec::variance_slots`]) and AR coefficients.
pub fn profile_log_likelihood(spec: &ModelSpec, ts: &TimeSeries, ratios: &[f64], ar: &[f64]) -> Result<Profile> {
    Evaluator::new(spec, ts)?.profile(ratios, ar)
}

/// Fits `spec` to `ts` by maximizing the profile likelihood.
pub fn fit_mle(spec: &ModelSpec, ts: &TimeSeries, config: &FitConfig) -> Result<FitReport> {
    let start_time = Instant::now();
    let n_obs = ts.n_observed();
    if n_obs == 0 {
        return Err(Error::AllMissing);
    }
    spec.validate()?;
    let dim = spec.state_dim()?;
    if n_obs < dim.max(1) {
        return Err(Error::invalid(format!(
            "{n_obs} observed points for a state of dimension {dim}"
        )));
    }
    let eval = Evaluator::new(spec, ts)?;
    let slots = spec.variance_slots();
    let tr = ParamTransform::new(slots.len(), spec.ar_order);
    let start = vec![0.0; tr.dim()];
    {
        let (r0, a0) = tr.to_model(&start);
        eval.profile(&r0, &a0)?;
    }
    let objective = |raw: &[f64]| {
        let (r, a) = tr.to_model(raw);
        match eval.profile(&r, &a) {
            Ok(p) => -p.log_likelihood,
            Err(_) => f64::INFINITY,
        }
    };
    let min = minimize(objective, &start, &config.optimizer);
    let (ratios, ar) = tr.to_model(&min.x);
    let prof = eval.profile(&ratios, &ar)?;
    log::debug!("{spec}: l={} after {} evaluations", prof.log_likelihood, min.evaluations);

    let variances: Vec<f64> = ratios.iter().map(|r| r * prof.sigma2).collect();
    let mut params: Vec<NamedParam> = slots
        .iter()
        .zip(&variances)
        .map(|(name, &value)| NamedParam { name: name.clone(), value })
        .collect();
    params.push(NamedParam { name: "sigma2".into(), value: prof.sigma2 });
    params.extend(ar.iter().enumerate().map(|(j, &value)| NamedParam { name: format!("a_{}", j + 1), value }));

    let n_params = count_params_with(spec, config.count_rule)?;
    Ok(FitReport {
        spec: spec.clone(),
        label: ts.label().to_string(),
        params,
        variances,
        ar_coefficients: ar,
        sigma2: prof.sigma2,
        prior_variance: eval.kappa * prof.sigma2,
        log_likelihood: prof.log_likelihood,
        aic: -2.0 * prof.log_likelihood + 2.0 * n_params as f64,
        n_params,
        n_obs,
        converged: min.converged,
        iterations: min.evaluations,
        runtime_seconds: start_time.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub spec: ModelSpec,
    #[serde(serialize_with = "serialize_row_result")]
    pub result: std::result::Result<FitReport, String>,
}

fn serialize_row_result<S: serde::Serializer>(
    r: &std::result::Result<FitReport, String>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    #[serde(rename_all = "lowercase")]
    enum Tagged<'a> {
        Ok(&'a FitReport),
        Failed(&'a str),
    }
    match r {
        Ok(f) => Tagged::Ok(f).serialize(s),
        Err(e) => Tagged::Failed(e).serialize(s),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Row with the smallest AIC among successful fits.
    pub best: Option<usize>,
}

impl SweepTable {
    pub fn best_fit(&self) -> Option<&FitReport> {
        self.best.and_then(|i| self.rows[i].result.as_ref().ok())
    }
}

/// Fits every spec of `grid`; failures are recorded per row. `threads = None`
/// uses the global rayon pool.
pub fn sweep(grid: &[ModelSpec], ts: &TimeSeries, config: &FitConfig, threads: Option<usize>) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::invalid("empty sweep grid"));
    }
    let run = || -> Vec<SweepRow> {
        grid.par_iter()
            .map(|spec| SweepRow {
                spec: spec.clone(),
                result: fit_mle(spec, ts, config).map_err(|e| e.to_string()),
            })
            .collect()
    };
    let rows = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let best = select_best(&rows);
    Ok(SweepTable { rows, best })
}

fn select_best(rows: &[SweepRow]) -> Option<usize> {
    let mut best: Option<(usize, &FitReport)> = None;
    for (i, row) in rows.iter().enumerate() {
        let Ok(fit) = &row.result else { continue };
        if !fit.aic.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => fit
                .aic
                .total_cmp(&b.aic)
                .then(fit.n_params.cmp(&b.n_params))
                .then_with(|| fit.spec.order_key().cmp(&b.spec.order_key()))
                .is_lt(),
        };
        if better {
            best = Some((i, fit));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{DummySeasonalSpec, SeasonalVariant, TrigSpec};

    fn trig(m1: usize, m3: usize, m4: usize) -> ModelSpec {
        ModelSpec::trigonometric(m1, m3, 12.0, m4, CoefficientDynamics::RandomWalk)
    }

    fn trig_const(m1: usize, m3: usize, m4: usize) -> ModelSpec {
        ModelSpec::trigonometric(m1, m3, 12.0, m4, CoefficientDynamics::Constant)
    }

    /// `AIC + 2 l - 2 k`
    fn gap(ll: f64, aic: f64, k: usize) -> f64 {
        aic + 2.0 * ll - 2.0 * k as f64
    }

    #[test]
    fn id_function() {
        assert_eq!(id(0), 0);
        assert_eq!(id(1), 1);
        assert_eq!(id(2), 1);
    }

    #[test]
    fn worked_counts() {
        assert_eq!(count_params(&ModelSpec::decomp(2, Some(12), 1)), 5);
        assert_eq!(count_params(&trig(2, 2, 7)), 6);
        assert_eq!(count_params(&trig(2, 0, 4)), 3);
        assert_eq!(count_params(&ModelSpec::white_noise()), 1);
        assert!((gap(-759.39, 1528.79, 5)).abs() < 0.03);
        assert!((gap(-734.64, 1481.29, 6)).abs() < 0.03);
        assert!((gap(-757.01, 1520.01, 3)).abs() < 0.03);
    }

    #[test]
    fn constant_trig_terms_are_counted() {
        assert_eq!(count_params(&trig_const(2, 1, 7)), 4 + 7);
        assert_eq!(count_params(&trig_const(2, 2, 3)), 5 + 3);
    }

    #[test]
    fn plus_state_dim_rule() {
        let s = ModelSpec::decomp(2, Some(12), 1);
        // 1 + 1 + 1 + 1 + (2 + 11 + 1)
        assert_eq!(count_params_with(&s, ParamCountRule::PlusStateDim).unwrap(), 18);
    }

    #[test]
    fn two_period_spec_counts() {
        let mut s = trig(2, 1, 23);
        s.trig[0].period = 24.0;
        let mut t2 = TrigSpec::new(168.0, 16, CoefficientDynamics::RandomWalk);
        t2.count = crate::components::TermCount::Retained(16);
        s.trig.push(t2);
        s.seasonal = Some(DummySeasonalSpec { period: 7, variant: SeasonalVariant::SumForm });
        // tau2 x (trend, seasonal, ar, trig1, trig2) + sigma2 + a_1
        assert_eq!(count_params(&s), 7);
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        // small LCG + Box-Muller, enough for unit tests
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        };
        (0..n)
            .map(|_| {
                let (u, v) = (next(), next());
                (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect()
    }

    #[test]
    fn white_noise_fit_is_sample_second_moment() {
        let y: Vec<f64> = noise(500, 3).iter().map(|e| 1.5 * e).collect();
        let ts = TimeSeries::from_values(y.clone()).unwrap();
        let fit = fit_mle(&ModelSpec::white_noise(), &ts, &FitConfig::default()).unwrap();
        let ms = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((fit.sigma2 - ms).abs() < 1e-12 * ms);
        assert_eq!(fit.n_params, 1);
        assert_eq!(fit.aic, -2.0 * fit.log_likelihood + 2.0);
        assert!(fit.converged);
    }

    #[test]
    fn fit_is_reproducible_and_rebuildable() {
        let e = noise(150, 9);
        let mut level = 0.0;
        let y: Vec<f64> = e
            .iter()
            .enumerate()
            .map(|(i, v)| {
                level += 0.3 * e[(i * 7 + 3) % e.len()];
                level + v
            })
            .collect();
        let ts = TimeSeries::from_values(y).unwrap();
        let spec = ModelSpec::decomp(1, None, 0);
        let a = fit_mle(&spec, &ts, &FitConfig::default()).unwrap();
        let b = fit_mle(&spec, &ts, &FitConfig::default()).unwrap();
        assert!(a.same_fit(&b));
        let model = a.model().unwrap();
        let direct = crate::state_space::kalman_filter(&model.model, &ts).unwrap();
        assert!((direct.log_likelihood - a.log_likelihood).abs() < 1e-8 * a.log_likelihood.abs());
        assert!(a.param("tau2_trend").unwrap() > 0.0);
    }

    #[test]
    fn too_few_observations() {
        let ts = TimeSeries::from_values(vec![1.0, 2.0]).unwrap();
        assert!(fit_mle(&ModelSpec::decomp(2, Some(12), 0), &ts, &FitConfig::default()).is_err());
    }

    fn dummy_fit(spec: ModelSpec, aic: f64, n_params: usize) -> SweepRow {
        SweepRow {
            spec: spec.clone(),
            result: Ok(FitReport {
                spec,
                label: String::new(),
                params: vec![],
                variances: vec![],
                ar_coefficients: vec![],
                sigma2: 1.0,
                prior_variance: 1.0,
                log_likelihood: 0.0,
                aic,
                n_params,
                n_obs: 1,
                converged: true,
                iterations: 0,
                runtime_seconds: 0.0,
            }),
        }
    }

    #[test]
    fn tie_breaking() {
        let rows = vec![
            dummy_fit(trig(2, 1, 3), 10.0, 5),
            dummy_fit(trig(2, 0, 3), 10.0, 4),
            dummy_fit(trig(2, 0, 2), 10.0, 4),
            SweepRow { spec: trig(2, 0, 1), result: Err("boom".into()) },
            dummy_fit(trig(2, 0, 5), 11.0, 1),
        ];
        assert_eq!(select_best(&rows), Some(2));
        assert_eq!(select_best(&rows[3..4]), None);
    }

    #[test]
    fn empty_grid_rejected() {
        let ts = TimeSeries::from_values(vec![1.0, 2.0]).unwrap();
        assert!(sweep(&[], &ts, &FitConfig::default(), None).is_err());
    }
}
