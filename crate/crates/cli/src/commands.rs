use serde::Serialize;

use seastate::components::{ComponentKind, Decomposition};
use seastate::estimation::{fit_mle, sweep, FitReport, SweepTable};
use seastate::state_space::{kalman_filter, predict};
use seastate::timeseries::{load_csv, log_transform, resample_decimate, subtract_series, TimeSeries};
use seastate::trig_regression::{aic_prime, fit_ols, fit_order, subset_select, TrigRegressionFit};

use crate::config::{CommandKind, ConfigError, Orders, RunConfig};
use crate::output::{json, num, opt_num, series_csv, Outputs, Table};

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<seastate::Error> for RunError {
    fn from(e: seastate::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(format!("io error: {e}"))
    }
}

pub fn run(cfg: &RunConfig) -> Result<Vec<std::path::PathBuf>, RunError> {
    let ts = load_series(cfg)?;
    let mut out = Outputs::default();
    match cfg.command {
        CommandKind::Decomp => decomp(cfg, &ts, &mut out)?,
        CommandKind::Sweep => sweep_cmd(cfg, &ts, &mut out)?,
        CommandKind::TwoStep => twostep(cfg, &ts, &mut out)?,
        CommandKind::Predict => predict_cmd(cfg, &ts, &mut out)?,
        CommandKind::Subset => subset(cfg, &ts, &mut out)?,
    }
    Ok(out.commit(&cfg.out_dir)?)
}

fn load_series(cfg: &RunConfig) -> Result<TimeSeries, RunError> {
    let mut ts = load_csv(&cfg.input, &cfg.column, &cfg.missing_token)?;
    if cfg.log {
        ts = log_transform(&ts)?;
    }
    if cfg.decimate > 1 {
        ts = resample_decimate(&ts, cfg.decimate)?;
    }
    Ok(ts)
}

fn single_fit(cfg: &RunConfig, ts: &TimeSeries) -> Result<FitReport, RunError> {
    let spec = cfg.model.spec(cfg.model.grid()[0])?;
    Ok(fit_mle(&spec, ts, &cfg.fit)?)
}

/// `n, y, observed`, one column per component, `periodic_sum` when there are
/// two or more trigonometric blocks, then `noise`.
pub fn components_csv(ts: &TimeSeries, dec: &Decomposition) -> String {
    let trig: Vec<usize> = dec
        .components
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| matches!(k, ComponentKind::Trig(_)))
        .map(|(i, _)| i)
        .collect();
    let with_sum = trig.len() >= 2;
    let mut header = vec!["n".to_string(), "y".into(), "observed".into()];
    header.extend(dec.components.iter().map(|(k, _)| k.column_name()));
    if with_sum {
        header.push("periodic_sum".into());
    }
    header.push("noise".into());
    let mut table = Table::new(&header);
    for i in 0..ts.len() {
        let mut row = vec![(i + 1).to_string(), opt_num(ts.get(i)), u8::from(ts.is_observed(i)).to_string()];
        row.extend(dec.components.iter().map(|(_, v)| num(v[i])));
        if with_sum {
            row.push(num(trig.iter().map(|&c| dec.components[c].1[i]).sum()));
        }
        row.push(opt_num(dec.noise[i]));
        table.push_row(&row);
    }
    table.into_string()
}

fn decomp(cfg: &RunConfig, ts: &TimeSeries, out: &mut Outputs) -> Result<(), RunError> {
    let fit = single_fit(cfg, ts)?;
    let dec = fit.model()?.decompose(ts)?;
    out.add("components.csv", components_csv(ts, &dec));
    out.add("fit.json", json(&fit));
    Ok(())
}

fn clean(msg: &str) -> String {
    msg.replace([',', '"', '\n', '\r'], " ")
}

fn aic_table(grid: &[Orders], table: &SweepTable, k: Option<u32>) -> String {
    let mut header = vec!["m1", "m2", "m3", "m4", "m5", "status", "n_params", "log_likelihood", "sigma2", "aic"];
    if k.is_some() {
        header.push("aic_prime");
    }
    header.extend(["minimum", "message"]);
    let mut t = Table::new(&header);
    for (i, (o, row)) in grid.iter().zip(&table.rows).enumerate() {
        let mut cells = vec![o.m1.to_string(), o.m2.to_string(), o.m3.to_string(), o.m4.to_string(), o.m5.to_string()];
        match &row.result {
            Ok(f) => {
                cells.extend(["ok".into(), f.n_params.to_string(), num(f.log_likelihood), num(f.sigma2), num(f.aic)]);
                if let Some(k) = k {
                    cells.push(num(aic_prime(f.aic, k)));
                }
                cells.push(u8::from(table.best == Some(i)).to_string());
                cells.push(String::new());
            }
            Err(e) => {
                cells.extend(["failed".into(), String::new(), String::new(), String::new(), String::new()]);
                if k.is_some() {
                    cells.push(String::new());
                }
                cells.push("0".into());
                cells.push(clean(e));
            }
        }
        t.push_row(&cells);
    }
    t.into_string()
}

fn run_grid(cfg: &RunConfig, ts: &TimeSeries) -> Result<(Vec<Orders>, SweepTable), RunError> {
    let grid = cfg.model.grid();
    let specs = grid.iter().map(|&o| cfg.model.spec(o)).collect::<Result<Vec<_>, _>>()?;
    let table = sweep(&specs, ts, &cfg.fit, cfg.threads)?;
    Ok((grid, table))
}

fn sweep_cmd(cfg: &RunConfig, ts: &TimeSeries, out: &mut Outputs) -> Result<(), RunError> {
    let (grid, table) = run_grid(cfg, ts)?;
    out.add("aic_table.csv", aic_table(&grid, &table, None));
    Ok(())
}

#[derive(Serialize)]
struct TwoStepReport<'a> {
    k: u32,
    long_period: f64,
    aic: f64,
    aic_prime: f64,
    stage2: &'a FitReport,
}

fn twostep(cfg: &RunConfig, ts: &TimeSeries, out: &mut Outputs) -> Result<(), RunError> {
    let (k, long_period) = (cfg.k.unwrap_or(0), cfg.long_period.unwrap_or(0.0));
    let regression = fit_ols(ts, long_period, k)?;
    let residual = subtract_series(ts, &regression.fitted_curve)?;
    let (grid, table) = run_grid(cfg, &residual)?;

    out.add("stage1_curve.csv", series_csv("curve", &regression.fitted_curve));
    let mut res = Table::new(&["n", "residual", "observed"]);
    for i in 0..residual.len() {
        res.push_row(&[(i + 1).to_string(), opt_num(residual.get(i)), u8::from(residual.is_observed(i)).to_string()]);
    }
    out.add("residual.csv", res.into_string());
    out.add("regression.json", json(&regression));
    out.add("aic_table.csv", aic_table(&grid, &table, Some(k)));
    let best = table
        .best_fit()
        .ok_or_else(|| RunError::Runtime("every second-stage fit failed".into()))?;
    let dec = best.model()?.decompose(&residual)?;
    out.add("components.csv", components_csv(&residual, &dec));
    let report = TwoStepReport { k, long_period, aic: best.aic, aic_prime: aic_prime(best.aic, k), stage2: best };
    out.add("fit.json", json(&report));
    Ok(())
}

fn predict_cmd(cfg: &RunConfig, ts: &TimeSeries, out: &mut Outputs) -> Result<(), RunError> {
    let fit = single_fit(cfg, ts)?;
    let model = fit.model()?.model;
    let filtered = kalman_filter(&model, ts)?;
    let forecasts = predict(&model, &filtered, cfg.horizon.unwrap_or(1))?;
    let mut t = Table::new(&["step", "n", "mean", "variance"]);
    for f in &forecasts {
        t.push_row(&[f.step.to_string(), f.n.to_string(), num(f.mean), num(f.variance)]);
    }
    out.add("forecast.csv", t.into_string());
    out.add("fit.json", json(&fit));
    Ok(())
}

#[derive(Serialize)]
struct SubsetReport<'a> {
    period: f64,
    max_order: usize,
    /// Minimum-AIC fit among the nested orders `0..=max_order`.
    best_order: &'a TrigRegressionFit,
    /// Minimum-AIC fit over all subsets.
    best_subset: &'a TrigRegressionFit,
}

fn subset(cfg: &RunConfig, ts: &TimeSeries, out: &mut Outputs) -> Result<(), RunError> {
    let period = cfg.model.trig_period.unwrap_or(0.0);
    let max_order = cfg.max_order.unwrap_or(0);
    let nested = (0..=max_order)
        .map(|o| fit_order(ts, period, o))
        .collect::<Result<Vec<_>, _>>()?;
    let sel = subset_select(ts, period, max_order)?;
    let mut t = Table::new(&["order", "ols_sigma2", "ols_aic", "subset_sigma2", "subset_aic", "n_models", "variables"]);
    for (fit, size) in nested.iter().zip(&sel.by_size) {
        let vars: Vec<String> = size.variables.iter().map(u32::to_string).collect();
        t.push_row(&[
            size.size.to_string(),
            num(fit.sigma2_hat),
            num(fit.aic),
            num(size.sigma2_hat),
            num(size.aic),
            size.n_models.to_string(),
            vars.join(" "),
        ]);
    }
    out.add("subset_table.csv", t.into_string());
    let best_order = nested
        .iter()
        .min_by(|a, b| a.aic.total_cmp(&b.aic))
        .expect("order 0 always present");
    out.add(
        "regression.json",
        json(&SubsetReport { period, max_order, best_order, best_subset: &sel.best }),
    );
    Ok(())
}
