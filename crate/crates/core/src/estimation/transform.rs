//! Maps between unconstrained optimizer coordinates and model parameters.
//!
//! Variance ratios use `exp`; AR coefficients go through partial
//! autocorrelations `phi_k = PARCOR_BOUND * tanh(raw_k)` and the Levinson
//! recursion, so every raw vector yields a stationary AR polynomial.
//!
//! Bounded partial autocorrelations alone do not keep the roots away from
//! the unit circle at high order: fifteen values of -0.9 already put a root
//! within 1e-19 of it, and rounding the coefficients to f64 can push a
//! clustered set of such roots outside. [`ParamTransform::to_model`]
//! therefore checks the rounded coefficients and, when needed, pulls every
//! root inward until the check passes.

/// Largest attainable |partial autocorrelation|.
pub const PARCOR_BOUND: f64 = 0.999;

/// Every mapped AR polynomial has all roots at most this far from the origin.
pub const ROOT_RADIUS_LIMIT: f64 = 1.0 - 1e-8;

/// Raw log-ratios are clamped to this range before exponentiation.
pub const LOG_RATIO_RANGE: (f64, f64) = (-60.0, 40.0);

/// Levinson recursion from partial autocorrelations to AR coefficients of
/// `p_n = sum_j a_j p_{n-j} + v_n`.
pub fn partial_autocorrelations_to_ar(phi: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(phi.len());
    for (m, &p) in phi.iter().enumerate() {
        let prev = a.clone();
        for j in 0..m {
            a[j] = prev[j] - p * prev[m - 1 - j];
        }
        a.push(p);
    }
    a
}

/// Step-down recursion, the inverse of [`partial_autocorrelations_to_ar`].
/// Returns `None` when some partial autocorrelation reaches magnitude 1
/// (the polynomial is not stationary).
///
/// Each step divides by `1 - phi_k^2`, which amplifies rounding error at
/// high order, so the recursion runs in double-double arithmetic.
pub fn ar_to_partial_autocorrelations(a: &[f64]) -> Option<Vec<f64>> {
    let m = a.len();
    let mut cur: Vec<Dd> = a.iter().map(|&v| Dd::from(v)).collect();
    let mut phi = vec![0.0; m];
    for k in (0..m).rev() {
        let p = cur[k];
        phi[k] = p.value();
        if !(phi[k].abs() < 1.0) {
            return None;
        }
        let denom = Dd::from(1.0).sub(p.mul(p));
        cur = (0..k).map(|j| cur[j].add(p.mul(cur[k - 1 - j])).div(denom)).collect();
    }
    Some(phi)
}

/// Whether every root of `z^m - a_1 z^{m-1} - ... - a_m` lies within
/// `radius`, decided by a step-down on `a_k / radius^k` with a running bound
/// on its rounding error. Borderline cases the bound cannot settle count as
/// outside, so `true` is reliable.
pub fn roots_within(a: &[f64], radius: f64) -> bool {
    const DD_EPS: f64 = 1e-30;
    let m = a.len();
    let inv = Dd::from(1.0).div(Dd::from(radius));
    let mut scale = Dd::from(1.0);
    let mut cur: Vec<Dd> = a
        .iter()
        .map(|&v| {
            scale = scale.mul(inv);
            Dd::from(v).mul(scale)
        })
        .collect();
    let amax = |v: &[Dd]| v.iter().fold(0.0f64, |acc, x| acc.max(x.value().abs()));
    let mut err = DD_EPS * amax(&cur);
    for k in (0..m).rev() {
        let p = cur[k];
        let pv = p.value().abs();
        if !(pv + err < 1.0) || !err.is_finite() {
            return false;
        }
        let denom = Dd::from(1.0).sub(p.mul(p));
        let before = amax(&cur[..k]);
        cur = (0..k).map(|j| cur[j].add(p.mul(cur[k - 1 - j])).div(denom)).collect();
        let after = amax(&cur);
        err = (err * (2.0 + before + 2.0 * after) + DD_EPS * after) / denom.value();
    }
    true
}

/// Scales root moduli by successively smaller factors until
/// [`roots_within`] certifies [`ROOT_RADIUS_LIMIT`].
fn contract_roots(a: Vec<f64>) -> Vec<f64> {
    if roots_within(&a, ROOT_RADIUS_LIMIT) {
        return a;
    }
    let mut rho: f64 = 1.0 - 1e-6;
    for _ in 0..64 {
        let mut pow = 1.0;
        let scaled: Vec<f64> = a
            .iter()
            .map(|&v| {
                pow *= rho;
                v * pow
            })
            .collect();
        if roots_within(&scaled, ROOT_RADIUS_LIMIT) {
            return scaled;
        }
        rho *= rho;
    }
    vec![0.0; a.len()]
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Dd {
    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn quick(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd { hi: s, lo: b - (s - a) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        Dd::quick(s.hi, s.lo + self.lo + o.lo)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Dd::quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        Dd::quick(q1, q2)
    }
}

/// Coordinates of one model family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamTransform {
    pub n_variances: usize,
    pub ar_order: usize,
}

impl ParamTransform {
    pub fn new(n_variances: usize, ar_order: usize) -> Self {
        Self { n_variances, ar_order }
    }

    pub fn dim(&self) -> usize {
        self.n_variances + self.ar_order
    }

    /// Raw vector to `(variance ratios, AR coefficients)`. The AR
    /// coefficients always satisfy [`roots_within`]`(a, ROOT_RADIUS_LIMIT)`.
    pub fn to_model(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(raw.len(), self.dim());
        let (lo, hi) = LOG_RATIO_RANGE;
        let ratios = raw[..self.n_variances].iter().map(|r| r.clamp(lo, hi).exp()).collect();
        let phi: Vec<f64> = raw[self.n_variances..]
            .iter()
            .map(|r| PARCOR_BOUND * r.tanh())
            .collect();
        (ratios, contract_roots(partial_autocorrelations_to_ar(&phi)))
    }

    /// Inverse of [`to_model`](Self::to_model) wherever no contraction was
    /// needed. `None` when a ratio is not positive or the AR coefficients
    /// lie outside the attainable region.
    pub fn to_raw(&self, ratios: &[f64], ar: &[f64]) -> Option<Vec<f64>> {
        if ratios.len() != self.n_variances || ar.len() != self.ar_order {
            return None;
        }
        let mut raw = Vec::with_capacity(self.dim());
        for &r in ratios {
            if !(r > 0.0) {
                return None;
            }
            raw.push(r.ln());
        }
        for p in ar_to_partial_autocorrelations(ar)? {
            let s = p / PARCOR_BOUND;
            if !(s.abs() < 1.0) {
                return None;
            }
            raw.push(s.atanh());
        }
        Some(raw)
    }
}
