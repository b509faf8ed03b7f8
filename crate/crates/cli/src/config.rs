//! Run configuration: a flat `key = value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use seastate::components::{
    excluded_harmonics, CoefficientDynamics, DummySeasonalSpec, ModelSpec, OneFactorSpec, SeasonalVariant,
    TermCount, TrigSpec,
};
use seastate::estimation::{FitConfig, ParamCountRule};
use seastate::timeseries::{load_csv, Column};

/// Invalid configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Every recognised key, with its help text. Keys double as `--flag` names.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "CSV file holding the series"),
    ("column", "column name or zero-based index (default 0)"),
    ("missing-token", "cell text marking a missing value (default empty)"),
    ("log", "take natural logarithms before fitting"),
    ("decimate", "keep every k-th observation"),
    ("m1", "trend order 0..2; list or range for sweeps"),
    ("m2", "dummy-variable seasonal 0/1; list or range for sweeps"),
    ("period", "seasonal period (integer for m2 = 1)"),
    ("seasonal-variant", "sum-form | lag-random-walk"),
    ("m3", "AR order; list or range for sweeps"),
    ("m4", "number of trigonometric terms; list or range for sweeps"),
    ("trig-period", "period of the first trigonometric block (default: period)"),
    ("trig-dynamics", "constant | random-walk"),
    ("level-term", "add a level coefficient to the first trigonometric block"),
    ("m5", "retained terms of the second trigonometric block; list or range"),
    ("period2", "period of the second trigonometric block"),
    ("trig-dynamics2", "dynamics of the second block (default: trig-dynamics)"),
    ("auto-exclude", "drop harmonics of period2 shared with trig-period (default true)"),
    ("one-factor", "CSV file holding the one-factor curve"),
    ("one-factor-column", "column of the one-factor curve (default 0)"),
    ("k", "harmonics of the long-period regression"),
    ("long-period", "period of the long-period regression"),
    ("max-order", "largest regression order for subset search"),
    ("horizon", "forecast steps"),
    ("out-dir", "output directory (default .)"),
    ("threads", "worker threads for sweeps"),
    ("count-rule", "variances | plus-state-dim"),
];

/// Keys that take no value on the command line.
pub const SWITCHES: &[&str] = &["log", "level-term", "auto-exclude"];

/// Parses a `key = value` file. Blank lines and `#` comments are skipped;
/// `_` in keys is read as `-`.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(bad(format!("config line {}: unknown key '{key}'", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Inclusive integer list: `3`, `0..11`, `1,3,5` or `0..2,7`.
pub fn parse_range(key: &str, text: &str) -> Result<Vec<usize>, ConfigError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a = parse_usize(key, a)?;
            let b = parse_usize(key, b.trim_start_matches('='))?;
            if a > b {
                return Err(bad(format!("{key}: empty range {part}")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_usize(key, part)?);
        }
    }
    if out.is_empty() {
        return Err(bad(format!("{key}: empty range")));
    }
    Ok(out)
}

fn parse_usize(key: &str, s: &str) -> Result<usize, ConfigError> {
    s.trim().parse().map_err(|_| bad(format!("{key}: '{s}' is not a non-negative integer")))
}

fn parse_positive(key: &str, s: &str) -> Result<f64, ConfigError> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(bad(format!("{key}: '{s}' is not a positive number"))),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(bad(format!("{key}: '{s}' is not a boolean"))),
    }
}

fn parse_dynamics(key: &str, s: &str) -> Result<CoefficientDynamics, ConfigError> {
    match s.trim() {
        "constant" => Ok(CoefficientDynamics::Constant),
        "random-walk" | "rw" => Ok(CoefficientDynamics::RandomWalk),
        _ => Err(bad(format!("{key}: expected constant or random-walk, got '{s}'"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Decomp,
    Sweep,
    TwoStep,
    Predict,
    Subset,
}

impl CommandKind {
    pub const ALL: [(&'static str, CommandKind, &'static str); 5] = [
        ("decomp", CommandKind::Decomp, "fit one model and write its smoothed components"),
        ("sweep", CommandKind::Sweep, "fit every model of an order grid and tabulate AIC"),
        ("twostep", CommandKind::TwoStep, "remove a long-period regression, then fit the residual"),
        ("predict", CommandKind::Predict, "fit one model and forecast"),
        ("subset", CommandKind::Subset, "trigonometric regression by order and best subset"),
    ];
}

/// One grid point of model orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Orders {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub m4: usize,
    pub m5: usize,
}

#[derive(Debug, Clone)]
pub struct ModelTemplate {
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
    pub m3: Vec<usize>,
    pub m4: Vec<usize>,
    pub m5: Vec<usize>,
    pub period: Option<f64>,
    pub seasonal_variant: SeasonalVariant,
    pub trig_period: Option<f64>,
    pub trig_dynamics: CoefficientDynamics,
    pub level_term: bool,
    pub period2: Option<f64>,
    pub trig_dynamics2: CoefficientDynamics,
    pub auto_exclude: bool,
    pub one_factor: Option<OneFactorSpec>,
    /// Some order was given as a list or range.
    pub ranged: bool,
}

impl ModelTemplate {
    /// Grid points in row order: m1, m2, m3, m4, m5 with m5 varying fastest.
    pub fn grid(&self) -> Vec<Orders> {
        let mut out = Vec::new();
        for &m1 in &self.m1 {
            for &m2 in &self.m2 {
                for &m3 in &self.m3 {
                    for &m4 in &self.m4 {
                        for &m5 in &self.m5 {
                            out.push(Orders { m1, m2, m3, m4, m5 });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn spec(&self, o: Orders) -> Result<ModelSpec, ConfigError> {
        let seasonal = if o.m2 == 1 {
            let p = self.period.ok_or_else(|| bad("m2 = 1 needs --period"))?;
            if p.fract() != 0.0 || p < 2.0 {
                return Err(bad(format!("period {p}: the dummy seasonal needs an integer period >= 2")));
            }
            Some(DummySeasonalSpec { period: p as usize, variant: self.seasonal_variant })
        } else {
            None
        };
        let mut trig = Vec::new();
        if o.m4 > 0 || self.level_term {
            let p = self.trig_period.ok_or_else(|| bad("m4 > 0 needs --trig-period or --period"))?;
            trig.push(TrigSpec {
                period: p,
                count: TermCount::Nominal(o.m4),
                dynamics: self.trig_dynamics,
                excluded: Default::default(),
                level_term: self.level_term,
            });
        }
        if o.m5 > 0 {
            if trig.is_empty() {
                return Err(bad("m5 > 0 needs a first trigonometric block (m4 > 0)"));
            }
            let p2 = self.period2.ok_or_else(|| bad("m5 > 0 needs --period2"))?;
            let excluded = if self.auto_exclude {
                excluded_harmonics(trig[0].period, p2).map_err(|e| bad(e.to_string()))?.indices
            } else {
                Default::default()
            };
            trig.push(TrigSpec {
                period: p2,
                count: TermCount::Retained(o.m5),
                dynamics: self.trig_dynamics2,
                excluded,
                level_term: false,
            });
        }
        Ok(ModelSpec {
            trend_order: o.m1,
            seasonal,
            ar_order: o.m3,
            trig,
            one_factor: self.one_factor.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: PathBuf,
    pub column: Column,
    pub missing_token: String,
    pub log: bool,
    pub decimate: usize,
    pub model: ModelTemplate,
    pub k: Option<u32>,
    pub long_period: Option<f64>,
    pub max_order: Option<usize>,
    pub horizon: Option<usize>,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub fit: FitConfig,
}

struct Settings<'a>(&'a BTreeMap<String, String>);

impl Settings<'_> {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn range(&self, key: &str, default: usize) -> Result<(Vec<usize>, bool), ConfigError> {
        match self.get(key) {
            Some(s) => Ok((parse_range(key, s)?, s.contains("..") || s.contains(','))),
            None => Ok((vec![default], false)),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|s| parse_positive(key, s)).transpose()
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(key).map(|s| parse_usize(key, s)).transpose()
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.get(key).map_or(Ok(default), |s| parse_bool(key, s))
    }
}

impl RunConfig {
    /// Validates the merged settings. `env_threads` caps the thread count.
    pub fn from_settings(
        command: CommandKind,
        map: &BTreeMap<String, String>,
        env_threads: Option<&str>,
    ) -> Result<Self, ConfigError> {
        let s = Settings(map);
        let input = PathBuf::from(s.get("input").ok_or_else(|| bad("missing --input"))?);
        let column: Column = s.get("column").unwrap_or("0").parse().unwrap_or(Column::Index(0));
        let missing_token = s.get("missing-token").unwrap_or("").to_string();
        let decimate = s.count("decimate")?.unwrap_or(1);
        if decimate == 0 {
            return Err(bad("decimate: step must be at least 1"));
        }

        let (m1, r1) = s.range("m1", 0)?;
        let (m2, r2) = s.range("m2", 0)?;
        let (m3, r3) = s.range("m3", 0)?;
        let (m4, r4) = s.range("m4", 0)?;
        let (m5, r5) = s.range("m5", 0)?;
        if let Some(v) = m1.iter().find(|&&v| v > 2) {
            return Err(bad(format!("m1 = {v}: trend order must be 0, 1 or 2")));
        }
        if let Some(v) = m2.iter().find(|&&v| v > 1) {
            return Err(bad(format!("m2 = {v}: must be 0 or 1")));
        }
        let period = s.positive("period")?;
        let seasonal_variant = match s.get("seasonal-variant").unwrap_or("sum-form") {
            "sum-form" | "sum" => SeasonalVariant::SumForm,
            "lag-random-walk" | "lag" => SeasonalVariant::LagRandomWalk,
            other => return Err(bad(format!("seasonal-variant: unknown '{other}'"))),
        };
        let trig_dynamics = s
            .get("trig-dynamics")
            .map_or(Ok(CoefficientDynamics::RandomWalk), |v| parse_dynamics("trig-dynamics", v))?;
        let trig_dynamics2 = s
            .get("trig-dynamics2")
            .map_or(Ok(trig_dynamics), |v| parse_dynamics("trig-dynamics2", v))?;

        let one_factor = match s.get("one-factor") {
            Some(path) => {
                let col: Column = s.get("one-factor-column").unwrap_or("0").parse().unwrap_or(Column::Index(0));
                let curve = load_curve(Path::new(path), &col)?;
                Some(OneFactorSpec { curve: curve.into() })
            }
            None => None,
        };

        let model = ModelTemplate {
            m1,
            m2,
            m3,
            m4,
            m5,
            period,
            seasonal_variant,
            trig_period: s.positive("trig-period")?.or(period),
            trig_dynamics,
            level_term: s.flag("level-term", false)?,
            period2: s.positive("period2")?,
            trig_dynamics2,
            auto_exclude: s.flag("auto-exclude", true)?,
            one_factor,
            ranged: r1 || r2 || r3 || r4 || r5,
        };

        let threads = {
            let requested = s.count("threads")?;
            let cap = env_threads.map(|v| parse_usize("SEASTATE_THREADS", v)).transpose()?;
            if requested == Some(0) || cap == Some(0) {
                return Err(bad("threads must be at least 1"));
            }
            match (requested, cap) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            }
        };
        let count_rule = match s.get("count-rule").unwrap_or("variances") {
            "variances" => ParamCountRule::Variances,
            "plus-state-dim" => ParamCountRule::PlusStateDim,
            other => return Err(bad(format!("count-rule: unknown '{other}'"))),
        };

        let cfg = RunConfig {
            command,
            input,
            column,
            missing_token,
            log: s.flag("log", false)?,
            decimate,
            model,
            k: s.count("k")?.map(|k| k as u32),
            long_period: s.positive("long-period")?,
            max_order: s.count("max-order")?,
            horizon: s.count("horizon")?,
            out_dir: PathBuf::from(s.get("out-dir").unwrap_or(".")),
            threads,
            fit: FitConfig { count_rule, ..FitConfig::default() },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let single = self.model.grid().len() == 1;
        match self.command {
            CommandKind::Decomp | CommandKind::Predict if !single => {
                return Err(bad("decomp and predict need fixed orders, not ranges"));
            }
            CommandKind::Sweep if !self.model.ranged => {
                return Err(bad("sweep needs at least one order given as a list or range"));
            }
            CommandKind::TwoStep => {
                if self.k.unwrap_or(0) == 0 {
                    return Err(bad("twostep needs --k >= 1"));
                }
                if self.long_period.is_none() {
                    return Err(bad("twostep needs --long-period"));
                }
            }
            CommandKind::Subset => {
                if self.model.trig_period.is_none() {
                    return Err(bad("subset needs --trig-period or --period"));
                }
                if self.max_order.is_none() {
                    return Err(bad("subset needs --max-order"));
                }
            }
            _ => {}
        }
        if self.command == CommandKind::Predict && self.horizon.unwrap_or(0) == 0 {
            return Err(bad("predict needs --horizon >= 1"));
        }
        if self.command != CommandKind::Subset {
            for o in self.model.grid() {
                self.model.spec(o)?.validate().map_err(|e| bad(e.to_string()))?;
            }
        }
        Ok(())
    }
}

fn load_curve(path: &Path, column: &Column) -> Result<Vec<f64>, ConfigError> {
    let ts = load_csv(path, column, "").map_err(|e| bad(format!("one-factor curve: {e}")))?;
    if ts.n_observed() != ts.len() {
        return Err(bad("one-factor curve must not have missing values"));
    }
    Ok(ts.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}
