//! Component blocks and their composition into one state-space model.
//!
//! Each builder returns a [`ComponentBlock`] holding its own transition,
//! noise loading and observation-row segment. [`compose`] stacks blocks
//! block-diagonally in the order given; the observation row is the
//! concatenation of the block rows.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimation::transform::ar_to_partial_autocorrelations;
use crate::state_space::{
    kalman_filter, kalman_smooth, HarmonicTerm, ObservationRow, RowSegment, StateSpaceModel,
};
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeasonalVariant {
    /// `S_n = -(S_{n-1} + ... + S_{n-p+1}) + v_n`
    SumForm,
    /// `S_n = S_{n-p} + v_n`
    LagRandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientDynamics {
    Constant,
    RandomWalk,
}

/// How the size of a trigonometric block is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermCount {
    /// `m4` terms split into cosines and sines by [`harmonic_split`], after
    /// which excluded harmonics and vanishing sines are removed.
    Nominal(usize),
    /// The first `m` terms in increasing frequency that survive exclusion.
    Retained(usize),
}

impl TermCount {
    pub fn value(&self) -> usize {
        match *self {
            TermCount::Nominal(m) | TermCount::Retained(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DummySeasonalSpec {
    pub period: usize,
    pub variant: SeasonalVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigSpec {
    pub period: f64,
    pub count: TermCount,
    pub dynamics: CoefficientDynamics,
    pub excluded: BTreeSet<u32>,
    /// Prepends a `cos(0) = 1` coefficient acting as a random-walk level.
    pub level_term: bool,
}

impl TrigSpec {
    pub fn new(period: f64, m4: usize, dynamics: CoefficientDynamics) -> Self {
        Self {
            period,
            count: TermCount::Nominal(m4),
            dynamics,
            excluded: BTreeSet::new(),
            level_term: false,
        }
    }

    pub fn terms(&self) -> Result<Vec<HarmonicTerm>> {
        trig_terms(self.period, self.count, &self.excluded, self.level_term)
    }
}

fn serialize_curve_len<S: Serializer>(curve: &Arc<[f64]>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u64(curve.len() as u64)
}

/// Fixed curve scaled by a random-walk factor `beta_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneFactorSpec {
    #[serde(rename = "curve_len", serialize_with = "serialize_curve_len")]
    pub curve: Arc<[f64]>,
}

/// One member of the model family: which components are present and their orders.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    /// `m1`: 0 (none), 1 or 2.
    pub trend_order: usize,
    /// `m2 = 1` when present.
    pub seasonal: Option<DummySeasonalSpec>,
    /// `m3`
    pub ar_order: usize,
    pub trig: Vec<TrigSpec>,
    pub one_factor: Option<OneFactorSpec>,
}

impl ModelSpec {
    /// No components at all: pure observation noise.
    pub fn white_noise() -> Self {
        Self {
            trend_order: 0,
            seasonal: None,
            ar_order: 0,
            trig: Vec::new(),
            one_factor: None,
        }
    }

    /// Dummy-variable seasonal adjustment model `(m1, m2, m3)`.
    pub fn decomp(m1: usize, period: Option<usize>, m3: usize) -> Self {
        Self {
            trend_order: m1,
            seasonal: period.map(|period| DummySeasonalSpec {
                period,
                variant: SeasonalVariant::SumForm,
            }),
            ar_order: m3,
            ..Self::white_noise()
        }
    }

    /// Trend + AR + one trigonometric block of `m4` terms (`m4 = 0` omits it).
    pub fn trigonometric(m1: usize, m3: usize, period: f64, m4: usize, dynamics: CoefficientDynamics) -> Self {
        let mut spec = Self::decomp(m1, None, m3);
        if m4 > 0 {
            spec.trig.push(TrigSpec::new(period, m4, dynamics));
        }
        spec
    }

    pub fn m2(&self) -> usize {
        usize::from(self.seasonal.is_some())
    }

    /// Order tuple used for ordering sweep rows: `(m1, m2, m3, m4_1, m4_2, ..., one_factor)`.
    pub fn order_key(&self) -> Vec<u64> {
        let mut key = vec![self.trend_order as u64, self.m2() as u64, self.ar_order as u64];
        key.extend(self.trig.iter().map(|t| t.count.value() as u64));
        key.push(u64::from(self.one_factor.is_some()));
        key
    }

    pub fn validate(&self) -> Result<()> {
        if self.trend_order > 2 {
            return Err(Error::model(format!("trend order m1={} outside 0..=2", self.trend_order)));
        }
        if let Some(s) = &self.seasonal {
            if s.period < 2 {
                return Err(Error::model("seasonal period must be at least 2"));
            }
        }
        for t in &self.trig {
            t.terms()?;
        }
        Ok(())
    }

    /// Names of the free system-noise variances, in block order.
    pub fn variance_slots(&self) -> Vec<String> {
        let mut slots = Vec::new();
        if self.trend_order > 0 {
            slots.push("tau2_trend".to_string());
        }
        if self.seasonal.is_some() {
            slots.push("tau2_seasonal".to_string());
        }
        if self.ar_order > 0 {
            slots.push("tau2_ar".to_string());
        }
        for (i, t) in self.trig.iter().enumerate() {
            if t.dynamics == CoefficientDynamics::RandomWalk {
                slots.push(format!("tau2_trig_{}", i + 1));
            }
        }
        if self.one_factor.is_some() {
            slots.push("tau2_one_factor".to_string());
        }
        slots
    }

    /// Builds every block with the given variances (ordered as
    /// [`variance_slots`](Self::variance_slots)) and AR coefficients.
    pub fn blocks(&self, variances: &[f64], ar: &[f64]) -> Result<Vec<ComponentBlock>> {
        self.validate()?;
        let n_slots = self.variance_slots().len();
        if variances.len() != n_slots {
            return Err(Error::LengthMismatch { expected: n_slots, actual: variances.len() });
        }
        if ar.len() != self.ar_order {
            return Err(Error::LengthMismatch { expected: self.ar_order, actual: ar.len() });
        }
        let mut tau = variances.iter().copied();
        let mut blocks = Vec::new();
        if self.trend_order > 0 {
            blocks.push(build_trend(self.trend_order)?.with_variance(tau.next().unwrap_or(0.0)));
        }
        if let Some(s) = &self.seasonal {
            blocks.push(build_dummy_seasonal(s.period, s.variant)?.with_variance(tau.next().unwrap_or(0.0)));
        }
        if self.ar_order > 0 {
            blocks.push(build_ar(ar)?.with_variance(tau.next().unwrap_or(0.0)));
        }
        for (i, t) in self.trig.iter().enumerate() {
            let mut b = build_trig_block(t, i + 1)?;
            if t.dynamics == CoefficientDynamics::RandomWalk {
                b = b.with_variance(tau.next().unwrap_or(0.0));
            }
            blocks.push(b);
        }
        if let Some(f) = &self.one_factor {
            blocks.push(build_one_factor(f.curve.clone(), 0)?.with_variance(tau.next().unwrap_or(0.0)));
        }
        Ok(blocks)
    }

    /// Total state dimension.
    pub fn state_dim(&self) -> Result<usize> {
        let mut d = self.trend_order + self.ar_order + usize::from(self.one_factor.is_some());
        if let Some(s) = &self.seasonal {
            d += match s.variant {
                SeasonalVariant::SumForm => s.period - 1,
                SeasonalVariant::LagRandomWalk => s.period,
            };
        }
        for t in &self.trig {
            d += t.terms()?.len();
        }
        Ok(d)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m1={} m2={} m3={}", self.trend_order, self.m2(), self.ar_order)?;
        for (i, t) in self.trig.iter().enumerate() {
            let name = if i == 0 { "m4".to_string() } else { format!("m{}", 4 + i) };
            write!(f, " {name}={}", t.count.value())?;
        }
        if self.one_factor.is_some() {
            write!(f, " one_factor")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ComponentKind {
    Trend,
    Seasonal,
    Ar,
    /// 1-based index of the trigonometric block.
    Trig(usize),
    OneFactor,
}

impl ComponentKind {
    /// Column name used in component outputs.
    pub fn column_name(&self) -> String {
        match self {
            ComponentKind::Trend => "trend".into(),
            ComponentKind::Seasonal => "seasonal".into(),
            ComponentKind::Ar => "ar".into(),
            ComponentKind::Trig(i) => format!("trig_{i}"),
            ComponentKind::OneFactor => "one_factor".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBlock {
    pub kind: ComponentKind,
    pub transition: DMatrix<f64>,
    /// `dim x k`; `k = 0` for noise-free blocks.
    pub noise_loading: DMatrix<f64>,
    /// Common variance of every noise input of the block.
    pub variance: f64,
    pub row: RowSegment,
}

impl ComponentBlock {
    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn n_noise(&self) -> usize {
        self.noise_loading.ncols()
    }

    pub fn with_variance(mut self, tau2: f64) -> Self {
        self.variance = tau2;
        self
    }
}

fn unit_vector_loading(dim: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, 1);
    g[(0, 0)] = 1.0;
    g
}

fn first_entry_row(dim: usize) -> RowSegment {
    let mut h = vec![0.0; dim];
    h[0] = 1.0;
    RowSegment::Fixed(h)
}

/// Trend with `Delta^m1 T_n = v_n`.
pub fn build_trend(m1: usize) -> Result<ComponentBlock> {
    let transition = match m1 {
        1 => DMatrix::from_element(1, 1, 1.0),
        2 => DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 1.0, 0.0]),
        _ => return Err(Error::model(format!("trend order must be 1 or 2, got {m1}"))),
    };
    Ok(ComponentBlock {
        kind: ComponentKind::Trend,
        noise_loading: unit_vector_loading(m1),
        row: first_entry_row(m1),
        transition,
        variance: 0.0,
    })
}

pub fn build_dummy_seasonal(period: usize, variant: SeasonalVariant) -> Result<ComponentBlock> {
    if period < 2 {
        return Err(Error::model(format!("seasonal period must be at least 2, got {period}")));
    }
    let dim = match variant {
        SeasonalVariant::SumForm => period - 1,
        SeasonalVariant::LagRandomWalk => period,
    };
    let mut f = DMatrix::zeros(dim, dim);
    for i in 1..dim {
        f[(i, i - 1)] = 1.0;
    }
    match variant {
        SeasonalVariant::SumForm => f.row_mut(0).fill(-1.0),
        SeasonalVariant::LagRandomWalk => f[(0, dim - 1)] = 1.0,
    }
    Ok(ComponentBlock {
        kind: ComponentKind::Seasonal,
        transition: f,
        noise_loading: unit_vector_loading(dim),
        row: first_entry_row(dim),
        variance: 0.0,
    })
}

/// Stationary AR block in companion form.
pub fn build_ar(coefficients: &[f64]) -> Result<ComponentBlock> {
    let m = coefficients.len();
    if m == 0 {
        return Err(Error::model("AR order must be at least 1"));
    }
    let parcor = ar_to_partial_autocorrelations(coefficients)
        .ok_or_else(|| Error::NonStationary(coefficients.to_vec()))?;
    if parcor.iter().any(|p| !(p.abs() < 1.0)) {
        return Err(Error::NonStationary(coefficients.to_vec()));
    }
    let mut f = DMatrix::zeros(m, m);
    for (j, &a) in coefficients.iter().enumerate() {
        f[(0, j)] = a;
    }
    for i in 1..m {
        f[(i, i - 1)] = 1.0;
    }
    Ok(ComponentBlock {
        kind: ComponentKind::Ar,
        transition: f,
        noise_loading: unit_vector_loading(m),
        row: first_entry_row(m),
        variance: 0.0,
    })
}

/// Splits `m4` terms into cosine and sine counts `(k_c, k_s)`.
pub fn harmonic_split(m4: usize) -> (usize, usize) {
    (m4 - m4 / 2, m4 / 2)
}

fn is_even_integer_half(period: f64, j: u32) -> bool {
    (period - 2.0 * j as f64).abs() < 1e-9
}

/// Every non-vanishing term for `period`, in increasing frequency, cosine first.
pub fn available_terms(period: f64) -> Vec<HarmonicTerm> {
    let mut out = Vec::new();
    let mut j = 1u32;
    while j as f64 <= period / 2.0 + 1e-9 {
        out.push(HarmonicTerm::Cos(j));
        if !is_even_integer_half(period, j) {
            out.push(HarmonicTerm::Sin(j));
        }
        j += 1;
    }
    out
}

fn trig_terms(
    period: f64,
    count: TermCount,
    excluded: &BTreeSet<u32>,
    level_term: bool,
) -> Result<Vec<HarmonicTerm>> {
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::model(format!("trigonometric period must be positive, got {period}")));
    }
    let max_index = (period / 2.0).ceil() as u32;
    if let Some(&bad) = excluded.iter().find(|&&j| j == 0 || j > max_index) {
        return Err(Error::model(format!(
            "excluded harmonic {bad} outside 1..={max_index} for period {period}"
        )));
    }
    let mut terms = Vec::new();
    if level_term {
        terms.push(HarmonicTerm::Level);
    }
    match count {
        TermCount::Nominal(m4) => {
            if m4 as f64 > period - 1.0 + 1e-9 {
                return Err(Error::model(format!(
                    "m4={m4} exceeds the maximum p-1 for period {period}"
                )));
            }
            let (kc, ks) = harmonic_split(m4);
            for j in 1..=kc as u32 {
                if !excluded.contains(&j) {
                    terms.push(HarmonicTerm::Cos(j));
                    if j as usize <= ks && !is_even_integer_half(period, j) {
                        terms.push(HarmonicTerm::Sin(j));
                    }
                }
            }
        }
        TermCount::Retained(m) => {
            let avail: Vec<_> = available_terms(period)
                .into_iter()
                .filter(|t| !excluded.contains(&t.harmonic()))
                .collect();
            if m > avail.len() {
                return Err(Error::model(format!(
                    "{m} terms requested but only {} remain for period {period} after exclusion",
                    avail.len()
                )));
            }
            terms.extend_from_slice(&avail[..m]);
        }
    }
    if terms.is_empty() {
        return Err(Error::model("trigonometric block has no terms left"));
    }
    Ok(terms)
}

/// Trigonometric seasonal block with `m4` nominal terms.
pub fn build_trig_seasonal(
    period: f64,
    m4: usize,
    dynamics: CoefficientDynamics,
    excluded: &BTreeSet<u32>,
) -> Result<ComponentBlock> {
    if m4 == 0 {
        return Err(Error::model("trigonometric block needs m4 >= 1"));
    }
    let spec = TrigSpec {
        period,
        count: TermCount::Nominal(m4),
        dynamics,
        excluded: excluded.clone(),
        level_term: false,
    };
    build_trig_block(&spec, 1)
}

/// Block for a full [`TrigSpec`]; `index` is its 1-based position among trig blocks.
pub fn build_trig_block(spec: &TrigSpec, index: usize) -> Result<ComponentBlock> {
    let terms = spec.terms()?;
    let dim = terms.len();
    let noise_loading = match spec.dynamics {
        CoefficientDynamics::Constant => DMatrix::zeros(dim, 0),
        CoefficientDynamics::RandomWalk => DMatrix::identity(dim, dim),
    };
    Ok(ComponentBlock {
        kind: ComponentKind::Trig(index),
        transition: DMatrix::identity(dim, dim),
        noise_loading,
        row: RowSegment::Harmonics {
            omega: std::f64::consts::TAU / spec.period,
            terms,
        },
        variance: 0.0,
    })
}

/// Harmonics of the long period `f2` that coincide with harmonics of the
/// short period `f1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub indices: BTreeSet<u32>,
    pub warning: Option<String>,
}

pub fn excluded_harmonics(f1: f64, f2: f64) -> Result<Exclusion> {
    if !(f1 > 0.0) || !(f2 > 0.0) {
        return Err(Error::invalid("periods must be positive"));
    }
    if f1 >= f2 {
        return Err(Error::invalid(format!("short period {f1} must be below long period {f2}")));
    }
    let ratio = f2 / f1;
    let k = ratio.round();
    if (ratio - k).abs() > 1e-9 * ratio || k < 2.0 {
        let warning = format!("period ratio {ratio} is not an integer; no harmonics excluded");
        log::warn!("{warning}");
        return Ok(Exclusion { indices: BTreeSet::new(), warning: Some(warning) });
    }
    let k = k as u32;
    let limit = (f2 / 2.0).ceil() as u32;
    Ok(Exclusion {
        indices: (1..).map(|i| i * k).take_while(|&j| j <= limit).collect(),
        warning: None,
    })
}

/// Scalar random-walk factor `beta_n` multiplying a fixed curve:
/// the block contributes `curve[n-1] * beta_n`. `required_len` is the
/// minimum number of time points the curve must cover.
pub fn build_one_factor(curve: Arc<[f64]>, required_len: usize) -> Result<ComponentBlock> {
    if curve.len() < required_len {
        return Err(Error::model(format!(
            "one-factor curve has {} points, {required_len} required",
            curve.len()
        )));
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::model("one-factor curve must be finite"));
    }
    Ok(ComponentBlock {
        kind: ComponentKind::OneFactor,
        transition: DMatrix::from_element(1, 1, 1.0),
        noise_loading: DMatrix::from_element(1, 1, 1.0),
        row: RowSegment::Curve(curve),
        variance: 0.0,
    })
}

/// Location of one block inside the composed state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComponentSpan {
    pub kind: ComponentKind,
    pub offset: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedModel {
    pub model: StateSpaceModel,
    pub spans: Vec<ComponentSpan>,
}

/// Stacks blocks block-diagonally. The result has `R = 1`, `x0 = 0`,
/// `V0 = I`; set them with the `StateSpaceModel::with_*` methods.
pub fn compose(blocks: &[ComponentBlock]) -> Result<ComposedModel> {
    let dim: usize = blocks.iter().map(ComponentBlock::dim).sum();
    let n_noise: usize = blocks.iter().map(ComponentBlock::n_noise).sum();
    let mut f = DMatrix::zeros(dim, dim);
    let mut g = DMatrix::zeros(dim, n_noise);
    let mut q = DVector::zeros(n_noise);
    let mut segments = Vec::with_capacity(blocks.len());
    let mut spans = Vec::with_capacity(blocks.len());
    let (mut off, mut noff) = (0, 0);
    for b in blocks {
        let (d, k) = (b.dim(), b.n_noise());
        if b.row.dim() != d || b.noise_loading.nrows() != d {
            return Err(Error::model(format!("inconsistent block {:?}", b.kind)));
        }
        f.view_mut((off, off), (d, d)).copy_from(&b.transition);
        g.view_mut((off, noff), (d, k)).copy_from(&b.noise_loading);
        q.rows_mut(noff, k).fill(b.variance);
        segments.push(b.row.clone());
        spans.push(ComponentSpan { kind: b.kind, offset: off, dim: d });
        off += d;
        noff += k;
    }
    let model = StateSpaceModel::new(
        f,
        g,
        q,
        1.0,
        ObservationRow::new(segments),
        DVector::zeros(dim),
        DMatrix::identity(dim, dim),
    )?;
    Ok(ComposedModel { model, spans })
}

/// Smoothed component trajectories aligned to the input series.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub components: Vec<(ComponentKind, Vec<f64>)>,
    /// `H_n x_{n|N}`
    pub fitted: Vec<f64>,
    /// `y_n - H_n x_{n|N}` at observed n.
    pub noise: Vec<Option<f64>>,
    pub log_likelihood: f64,
    pub used_pseudo_inverse: bool,
}

impl Decomposition {
    pub fn component(&self, kind: ComponentKind) -> Option<&[f64]> {
        self.components.iter().find(|(k, _)| *k == kind).map(|(_, v)| v.as_slice())
    }
}

impl ComposedModel {
    /// Filters and smooths `ts`, then splits `H_n x_{n|N}` by component.
    pub fn decompose(&self, ts: &TimeSeries) -> Result<Decomposition> {
        let fr = kalman_filter(&self.model, ts)?;
        let sm = kalman_smooth(&self.model, &fr)?;
        let d = self.model.dim_state();
        let mut h = vec![0.0; d];
        let mut components: Vec<(ComponentKind, Vec<f64>)> =
            self.spans.iter().map(|s| (s.kind, Vec::with_capacity(ts.len()))).collect();
        let mut fitted = Vec::with_capacity(ts.len());
        let mut noise = Vec::with_capacity(ts.len());
        for (i, x) in sm.means.iter().enumerate() {
            self.model.observation().fill(i + 1, &mut h)?;
            let mut total = 0.0;
            for (span, (_, out)) in self.spans.iter().zip(components.iter_mut()) {
                let v: f64 = (span.offset..span.offset + span.dim).map(|k| h[k] * x[k]).sum();
                out.push(v);
                total += v;
            }
            fitted.push(total);
            noise.push(ts.get(i).map(|y| y - total));
        }
        Ok(Decomposition {
            components,
            fitted,
            noise,
            log_likelihood: fr.log_likelihood,
            used_pseudo_inverse: sm.used_pseudo_inverse,
        })
    }
}
