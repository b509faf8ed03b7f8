//! Shared test helpers: a dense joint-Gaussian oracle for the filter and
//! smoother, random model generators and synthetic series.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use seastate::components::{
    build_ar, build_dummy_seasonal, build_trend, build_trig_seasonal, compose, CoefficientDynamics,
    SeasonalVariant,
};
use seastate::state_space::{ObservationRow, RowSegment, StateSpaceModel};
use seastate::timeseries::TimeSeries;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub struct Oracle {
    pub log_likelihood: f64,
    /// `E[x_n | y_1..y_N]`, indexed by `n - 1`.
    pub smoothed_means: Vec<DVector<f64>>,
}

/// Brute force: stack `x_1..x_N` into one Gaussian vector, condition on the
/// observed `y` directly.
pub fn joint_gaussian_oracle(model: &StateSpaceModel, ts: &TimeSeries) -> Oracle {
    let d = model.dim_state();
    let n = ts.len();
    let f = model.transition();
    let gqg = model.noise_loading() * DMatrix::from_diagonal(model.noise_variances()) * model.noise_loading().transpose();

    let mut mean = vec![model.initial_mean().clone()];
    let mut var = vec![model.initial_cov().clone()];
    for m in 1..=n {
        mean.push(f * &mean[m - 1]);
        var.push(f * &var[m - 1] * f.transpose() + &gqg);
    }
    let mut fpow = vec![DMatrix::<f64>::identity(d, d)];
    for k in 1..=n {
        fpow.push(f * &fpow[k - 1]);
    }
    // Cov(x_a, x_b), 1-based
    let cov = |a: usize, b: usize| -> DMatrix<f64> {
        if a >= b {
            &fpow[a - b] * &var[b]
        } else {
            (&fpow[b - a] * &var[a]).transpose()
        }
    };
    let h: Vec<DVector<f64>> = (1..=n)
        .map(|t| DVector::from_vec(model.observation().at(t).unwrap()))
        .collect();

    let obs: Vec<(usize, f64)> = ts.observed_iter().map(|(i, y)| (i + 1, y)).collect();
    let k = obs.len();
    let mut s = DMatrix::zeros(k, k);
    let mut resid = DVector::zeros(k);
    for (p, &(a, ya)) in obs.iter().enumerate() {
        resid[p] = ya - h[a - 1].dot(&mean[a]);
        for (q, &(b, _)) in obs.iter().enumerate() {
            s[(p, q)] = (h[a - 1].transpose() * cov(a, b) * &h[b - 1])[(0, 0)];
        }
        s[(p, p)] += model.observation_variance();
    }
    let chol = s.cholesky().expect("joint observation covariance must be positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let alpha = chol.solve(&resid);
    let log_likelihood =
        -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&alpha));

    let smoothed_means = (1..=n)
        .map(|t| {
            let mut m = mean[t].clone();
            for (p, &(b, _)) in obs.iter().enumerate() {
                m += cov(t, b) * &h[b - 1] * alpha[p];
            }
            m
        })
        .collect();
    Oracle { log_likelihood, smoothed_means }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    (&a * a.transpose()) * (scale / d as f64) + DMatrix::identity(d, d) * (0.1 * scale)
}

/// Generic model with dense `F`, random `G`, mixed fixed and harmonic rows.
pub fn random_dense_model(rng: &mut ChaCha8Rng) -> StateSpaceModel {
    let d = rng.random_range(1..=5);
    let k = rng.random_range(1..=d);
    let mut f = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let target = rng.random_range(0.5..1.1);
    f *= target / f.norm();
    let g = DMatrix::from_fn(d, k, |_, _| normal(rng));
    let q = DVector::from_fn(k, |_, _| rng.random_range(0.05..2.0));
    let r = rng.random_range(0.1..3.0);
    let split = rng.random_range(0..=d);
    let mut segments = vec![RowSegment::Fixed((0..split).map(|_| normal(rng)).collect())];
    if split < d {
        let terms = (split..d)
            .map(|i| {
                let j = 1 + (i as u32 % 3);
                if i % 2 == 0 {
                    seastate::state_space::HarmonicTerm::Cos(j)
                } else {
                    seastate::state_space::HarmonicTerm::Sin(j)
                }
            })
            .collect();
        segments.push(RowSegment::Harmonics { omega: std::f64::consts::TAU / 7.0, terms });
    }
    let x0 = DVector::from_fn(d, |_, _| normal(rng));
    let v0_scale = rng.random_range(0.5..5.0);
    let v0 = random_spd(rng, d, v0_scale);
    StateSpaceModel::new(f, g, q, r, ObservationRow::new(segments), x0, v0).unwrap()
}

/// Model assembled from component builders, total dimension at most 5.
pub fn random_component_model(rng: &mut ChaCha8Rng) -> StateSpaceModel {
    loop {
        let mut blocks = Vec::new();
        let mut dim = 0;
        if rng.random_bool(0.7) {
            let m1 = rng.random_range(1..=2);
            blocks.push(build_trend(m1).unwrap().with_variance(rng.random_range(0.01..1.0)));
            dim += m1;
        }
        if rng.random_bool(0.4) && dim + 2 <= 5 {
            let variant = if rng.random_bool(0.5) { SeasonalVariant::SumForm } else { SeasonalVariant::LagRandomWalk };
            let b = build_dummy_seasonal(3, variant).unwrap();
            if dim + b.dim() <= 5 {
                dim += b.dim();
                blocks.push(b.with_variance(rng.random_range(0.01..1.0)));
            }
        }
        if rng.random_bool(0.5) && dim < 5 {
            let a = rng.random_range(-0.9..0.9);
            blocks.push(build_ar(&[a]).unwrap().with_variance(rng.random_range(0.1..1.0)));
            dim += 1;
        }
        if rng.random_bool(0.5) && dim + 2 <= 5 {
            let dynamics = if rng.random_bool(0.5) { CoefficientDynamics::Constant } else { CoefficientDynamics::RandomWalk };
            let b = build_trig_seasonal(6.0, 2, dynamics, &Default::default()).unwrap();
            blocks.push(b.with_variance(rng.random_range(0.01..0.5)));
        }
        if blocks.is_empty() {
            continue;
        }
        let c = compose(&blocks).unwrap();
        let d = c.model.dim_state();
        let v0_scale = rng.random_range(1.0..10.0);
        let v0 = random_spd(rng, d, v0_scale);
        let x0 = DVector::from_fn(d, |_, _| normal(rng));
        return c
            .model
            .with_observation_variance(rng.random_range(0.1..2.0))
            .unwrap()
            .with_initial_state(x0, v0)
            .unwrap();
    }
}

/// Simulates `y_1..y_n` from `model`, dropping each point with probability `p_missing`.
pub fn simulate(model: &StateSpaceModel, n: usize, p_missing: f64, rng: &mut ChaCha8Rng) -> TimeSeries {
    let d = model.dim_state();
    let l0 = model.initial_cov().clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(d, d));
    let z = DVector::from_fn(d, |_, _| normal(rng));
    let mut x = model.initial_mean() + l0 * z;
    let mut out = Vec::with_capacity(n);
    for t in 1..=n {
        let v = DVector::from_fn(model.dim_noise(), |i, _| model.noise_variances()[i].sqrt() * normal(rng));
        x = model.transition() * x + model.noise_loading() * v;
        let h = DVector::from_vec(model.observation().at(t).unwrap());
        let y = h.dot(&x) + model.observation_variance().sqrt() * normal(rng);
        out.push(if rng.random_bool(p_missing) { None } else { Some(y) });
    }
    if out.iter().all(Option::is_none) {
        out[0] = Some(0.0);
    }
    TimeSeries::from_options(out).unwrap()
}

/// Monthly series: local linear trend, seven random-walk trigonometric
/// coefficients (cos 1-4, sin 1-3), AR(1) and white noise.
pub fn co2_like(n: usize, seed: u64) -> TimeSeries {
    let mut rng = rng(seed);
    let w = std::f64::consts::TAU / 12.0;
    let mut coef = [3.0, -2.5, 1.6, -1.2, 1.0, 0.8, -0.7];
    let terms: [(u32, bool); 7] = [(1, true), (1, false), (2, true), (2, false), (3, true), (3, false), (4, true)];
    for c in coef.iter_mut() {
        *c *= 1.0 + 0.3 * normal(&mut rng);
    }
    let (mut t, mut t_prev) = (320.0, 320.0 - 0.1);
    let mut ar = 0.0;
    let mut y = Vec::with_capacity(n);
    for i in 1..=n {
        let next = 2.0 * t - t_prev + 0.01 * normal(&mut rng);
        t_prev = t;
        t = next;
        ar = 0.7 * ar + 0.3 * normal(&mut rng);
        let mut s = 0.0;
        for (c, &(j, is_cos)) in coef.iter_mut().zip(&terms) {
            *c += 0.02 * normal(&mut rng);
            let x = w * j as f64 * i as f64;
            s += *c * if is_cos { x.cos() } else { x.sin() };
        }
        y.push(t + s + ar + 0.3 * normal(&mut rng));
    }
    TimeSeries::from_values(y).unwrap()
}
