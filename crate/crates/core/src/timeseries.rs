//! Univariate series with an explicit missing-value mask.
//!
//! Missing entries hold a NaN sentinel, but every numeric read goes through
//! [`TimeSeries::get`] or the observed-only iterators, so nothing downstream
//! ever branches on the stored value.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    observed: Vec<bool>,
    label: String,
    sampling_period: Option<String>,
}

/// Column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    /// Plain integers select by zero-based index, anything else by header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.trim().to_string()),
        })
    }
}

impl TimeSeries {
    /// Builds a series from optional values; `None` marks a missing observation.
    pub fn from_options(values: impl IntoIterator<Item = Option<f64>>) -> Result<Self> {
        let (values, observed): (Vec<f64>, Vec<bool>) = values
            .into_iter()
            .map(|v| match v {
                Some(x) if x.is_finite() => (x, true),
                _ => (f64::NAN, false),
            })
            .unzip();
        Self::from_parts(values, observed)
    }

    /// Fully observed series.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::from_options(values.into_iter().map(Some))
    }

    /// Builds from a value vector and mask. Values at masked-out indices are
    /// replaced by the sentinel.
    pub fn from_parts(mut values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != observed.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                actual: observed.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::ZeroRows);
        }
        for (v, &o) in values.iter_mut().zip(&observed) {
            if !o {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::invalid("observed values must be finite"));
            }
        }
        if !observed.iter().any(|&o| o) {
            return Err(Error::AllMissing);
        }
        Ok(Self {
            values,
            observed,
            label: String::new(),
            sampling_period: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_sampling_period(mut self, period: impl Into<String>) -> Self {
        self.sampling_period = Some(period.into());
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sampling_period(&self) -> Option<&str> {
        self.sampling_period.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at zero-based index `i`, `None` when missing.
    pub fn get(&self, i: usize) -> Option<f64> {
        if self.observed[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// `(index, value)` pairs for observed entries.
    pub fn observed_iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.observed)
            .enumerate()
            .filter(|(_, (_, &o))| o)
            .map(|(i, (&v, _))| (i, v))
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_mean(&self) -> f64 {
        let (s, c) = self
            .observed_iter()
            .fold((0.0, 0usize), |(s, c), (_, v)| (s + v, c + 1));
        s / c as f64
    }

    /// Unbiased sample variance of the observed values (0 for a single point).
    pub fn observed_variance(&self) -> f64 {
        let n = self.n_observed();
        if n < 2 {
            return 0.0;
        }
        let mean = self.observed_mean();
        self.observed_iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    /// Mean of squared observed values.
    pub fn observed_mean_square(&self) -> f64 {
        self.observed_iter().map(|(_, v)| v * v).sum::<f64>() / self.n_observed() as f64
    }

    fn map_observed(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.observed)
            .enumerate()
            .map(|(i, (&v, &o))| if o { f(i, v) } else { f64::NAN })
            .collect();
        Self {
            values,
            observed: self.observed.clone(),
            label: self.label.clone(),
            sampling_period: self.sampling_period.clone(),
        }
    }
}

/// Reads one column of a comma-separated file.
///
/// The first row is taken as a header when none of its cells is numeric. Cells equal to `missing_token`, empty cells and non-numeric cells
/// become missing observations.
pub fn load_csv(path: impl AsRef<Path>, column: &Column, missing_token: &str) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();

    let first = match records.next() {
        Some(r) => r?,
        None => return Err(Error::ZeroRows),
    };

    let header_row = !first.iter().any(|c| c.parse::<f64>().is_ok())
        && first.iter().any(|c| !c.is_empty() && c != missing_token);
    let col = match column {
        Column::Index(i) if *i < first.len() => *i,
        Column::Index(i) => return Err(Error::ColumnNotFound(i.to_string())),
        Column::Name(name) => match first.iter().position(|c| c == name) {
            Some(i) if header_row => i,
            _ => return Err(Error::ColumnNotFound(name.clone())),
        },
    };

    let parse = |cell: Option<&str>| -> Option<f64> {
        let cell = cell?;
        if cell.is_empty() || cell == missing_token {
            return None;
        }
        cell.parse::<f64>().ok().filter(|v| v.is_finite())
    };

    let mut values = Vec::new();
    if !header_row {
        values.push(parse(first.get(col)));
    }
    for record in records {
        let record = record?;
        values.push(parse(record.get(col)));
    }
    if values.is_empty() {
        return Err(Error::ZeroRows);
    }
    let label = match column {
        Column::Name(n) => n.clone(),
        Column::Index(i) if header_row => first.get(*i).unwrap_or_default().to_string(),
        Column::Index(i) => format!("column {i}"),
    };
    Ok(TimeSeries::from_options(values)?.with_label(label))
}

/// Natural logarithm of every observed value.
pub fn log_transform(ts: &TimeSeries) -> Result<TimeSeries> {
    if let Some((index, value)) = ts.observed_iter().find(|&(_, v)| v <= 0.0) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(ts.map_observed(|_, v| v.ln()))
}

/// Keeps indices `0, step, 2*step, ...`.
pub fn resample_decimate(ts: &TimeSeries, step: usize) -> Result<TimeSeries> {
    if step == 0 {
        return Err(Error::invalid("decimation step must be at least 1"));
    }
    let values: Vec<f64> = ts.values.iter().step_by(step).copied().collect();
    let observed: Vec<bool> = ts.observed.iter().step_by(step).copied().collect();
    if !observed.iter().any(|&o| o) {
        return Err(Error::AllMissing);
    }
    Ok(TimeSeries {
        values,
        observed,
        label: ts.label.clone(),
        sampling_period: ts.sampling_period.clone(),
    })
}

/// `y_n - q_n` at observed indices; the mask is preserved.
pub fn subtract_series(y: &TimeSeries, q: &[f64]) -> Result<TimeSeries> {
    if q.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: q.len(),
        });
    }
    Ok(y.map_observed(|i, v| v - q[i]))
}
