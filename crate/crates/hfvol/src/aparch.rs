//! Asymmetric power ARCH dynamics.
//!
//! The conditional scale follows, for parameters `alpha0 > 0`, `alpha_i >= 0`,
//! `beta_j >= 0`, `-1 <= gamma_i <= 1`, `delta > 0`:
//!
//! ```text
//! sigma_t^delta = alpha0 + sum_i alpha_i (|eps_{t-i}| + gamma_i eps_{t-i})^delta
//!                        + sum_j beta_j sigma_{t-j}^delta
//! ```
//!
//! with mean equation `eps_t = r_t - mu - sum ar_i r_{t-i} - sum ma_j eps_{t-j}`.
//! Note the `+gamma` sign: a negative `gamma_i` makes negative shocks raise
//! volatility more than positive ones of the same size.
//!
//! Innovations are standardized to unit variance under all three families
//! (normal, Student-t, GED), so `sigma_t` is the conditional standard
//! deviation throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::series::ReturnSeries;

/// APARCH(p, q) coefficients plus an ARMA mean equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AparchParams {
    pub mu: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: f64,
}

impl AparchParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: f64,
        ar: Vec<f64>,
        ma: Vec<f64>,
        alpha0: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<f64>,
        delta: f64,
    ) -> Result<Self> {
        let p = Self {
            mu,
            ar,
            ma,
            alpha0,
            alpha,
            beta,
            gamma,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Plain GARCH(1,1) in variance form: `delta = 2`, `gamma = 0`.
    pub fn garch11(alpha0: f64, alpha1: f64, beta1: f64) -> Result<Self> {
        Self::new(
            0.0,
            vec![],
            vec![],
            alpha0,
            vec![alpha1],
            vec![beta1],
            vec![0.0],
            2.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha0 must be positive, got {}",
                self.alpha0
            )));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if self.gamma.len() != self.alpha.len() {
            return Err(Error::InvalidParameter(format!(
                "gamma length {} must match alpha length {}",
                self.gamma.len(),
                self.alpha.len()
            )));
        }
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if let Some(bad) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} coefficients must be non-negative, got {bad}"
                )));
            }
        }
        if let Some(bad) = self.gamma.iter().find(|g| !(g.abs() <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [-1, 1], got {bad}"
            )));
        }
        for (name, v) in [("ar", &self.ar), ("ma", &self.ma)] {
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} coefficients must be finite, got {bad}"
                )));
            }
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu must be finite, got {}",
                self.mu
            )));
        }
        let persistence = self.persistence();
        if persistence > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "alpha + beta must not exceed 1, got {persistence}"
            )));
        }
        Ok(())
    }

    /// ARCH and GARCH orders `(p, q)`.
    pub fn order(&self) -> (usize, usize) {
        (self.alpha.len(), self.beta.len())
    }

    /// `sum(alpha) + sum(beta)`.
    pub fn persistence(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.beta.iter().sum::<f64>()
    }

    /// Longest lag any recursion looks back.
    pub fn lookback(&self) -> usize {
        self.alpha
            .len()
            .max(self.beta.len())
            .max(self.ar.len())
            .max(self.ma.len())
    }
}

/// Innovation distribution, standardized to unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistSpec {
    Normal,
    /// Student-t with `nu > 2` degrees of freedom.
    StudentT { nu: f64 },
    /// Generalized error distribution with tail exponent `shape > 0`;
    /// `shape = 2` is the normal, `shape = 1` the Laplace.
    Ged { shape: f64 },
}

impl DistSpec {
    pub fn normal() -> Self {
        DistSpec::Normal
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        let d = DistSpec::StudentT { nu };
        d.validate()?;
        Ok(d)
    }

    pub fn ged(shape: f64) -> Result<Self> {
        let d = DistSpec::Ged { shape };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DistSpec::Normal => Ok(()),
            DistSpec::StudentT { nu } => {
                if !(nu > 2.0) || !nu.is_finite() {
                    Err(Error::InvalidParameter(format!(
                        "student_t needs nu > 2 for unit variance, got {nu}"
                    )))
                } else {
                    Ok(())
                }
            }
            DistSpec::Ged { shape } => {
                if !(shape > 0.0) || !shape.is_finite() {
                    Err(Error::InvalidParameter(format!(
                        "ged needs a positive tail exponent, got {shape}"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DistSpec::Normal => "normal",
            DistSpec::StudentT { .. } => "student_t",
            DistSpec::Ged { .. } => "ged",
        }
    }

    pub fn shape(&self) -> Option<f64> {
        match *self {
            DistSpec::Normal => None,
            DistSpec::StudentT { nu } => Some(nu),
            DistSpec::Ged { shape } => Some(shape),
        }
    }

    /// Parse from strings accepted on the command line: `normal`, `t`,
    /// `student_t`, `ged`.
    pub fn from_cli(family: &str, shape: Option<f64>) -> Result<Self> {
        let family = match family {
            "t" => "student_t",
            other => other,
        };
        Self::from_family_shape(family, shape)
    }

    pub fn from_family_shape(family: &str, shape: Option<f64>) -> Result<Self> {
        match (family, shape) {
            ("normal", None) => Ok(DistSpec::Normal),
            ("normal", Some(_)) => Err(Error::InvalidParameter(
                "normal takes no shape parameter".into(),
            )),
            ("student_t", Some(nu)) => Self::student_t(nu),
            ("ged", Some(s)) => Self::ged(s),
            (f @ ("student_t" | "ged"), None) => Err(Error::InvalidParameter(format!(
                "{f} requires a shape parameter"
            ))),
            (other, _) => Err(Error::InvalidParameter(format!(
                "unknown distribution family '{other}'"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DistJson {
    family: String,
    shape: Option<f64>,
}

impl Serialize for DistSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DistJson {
            family: self.family_name().to_string(),
            shape: self.shape(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DistSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = DistJson::deserialize(deserializer)?;
        DistSpec::from_family_shape(&j.family, j.shape).map_err(serde::de::Error::custom)
    }
}

/// Parameters plus innovation family: everything that defines the process.
/// Serializes to flat JSON with explicit `dist_family` / `dist_shape` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct AparchModel {
    pub params: AparchParams,
    pub dist: DistSpec,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    mu: f64,
    ar: Vec<f64>,
    ma: Vec<f64>,
    alpha0: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    delta: f64,
    dist_family: String,
    dist_shape: Option<f64>,
}

impl Serialize for AparchModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let p = &self.params;
        ModelJson {
            mu: p.mu,
            ar: p.ar.clone(),
            ma: p.ma.clone(),
            alpha0: p.alpha0,
            alpha: p.alpha.clone(),
            beta: p.beta.clone(),
            gamma: p.gamma.clone(),
            delta: p.delta,
            dist_family: self.dist.family_name().to_string(),
            dist_shape: self.dist.shape(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AparchModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = ModelJson::deserialize(deserializer)?;
        let params = AparchParams::new(
            j.mu, j.ar, j.ma, j.alpha0, j.alpha, j.beta, j.gamma, j.delta,
        )
        .map_err(serde::de::Error::custom)?;
        let dist = DistSpec::from_family_shape(&j.dist_family, j.dist_shape)
            .map_err(serde::de::Error::custom)?;
        Ok(AparchModel { params, dist })
    }
}

impl AparchModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

const NEG_HALF_LN_2PI: f64 = -0.918_938_533_204_672_7;

/// Precomputed log-density constants for one innovation family.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DensityFn {
    Normal,
    StudentT { nu: f64, log_norm: f64 },
    Ged { shape: f64, lambda: f64, log_norm: f64 },
}

impl DensityFn {
    pub(crate) fn new(dist: DistSpec) -> Result<Self> {
        dist.validate()?;
        Ok(match dist {
            DistSpec::Normal => DensityFn::Normal,
            DistSpec::StudentT { nu } => DensityFn::StudentT {
                nu,
                log_norm: ln_gamma((nu + 1.0) / 2.0)
                    - ln_gamma(nu / 2.0)
                    - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln(),
            },
            DistSpec::Ged { shape } => {
                let lambda =
                    (2f64.powf(-2.0 / shape) * (ln_gamma(1.0 / shape) - ln_gamma(3.0 / shape)).exp())
                        .sqrt();
                DensityFn::Ged {
                    shape,
                    lambda,
                    log_norm: shape.ln()
                        - lambda.ln()
                        - (1.0 + 1.0 / shape) * std::f64::consts::LN_2
                        - ln_gamma(1.0 / shape),
                }
            }
        })
    }

    /// Log-density of a unit-variance standardized innovation.
    #[inline]
    pub(crate) fn log_density(&self, z: f64) -> f64 {
        match *self {
            DensityFn::Normal => NEG_HALF_LN_2PI - 0.5 * z * z,
            DensityFn::StudentT { nu, log_norm } => {
                log_norm - 0.5 * (nu + 1.0) * (z * z / (nu - 2.0)).ln_1p()
            }
            DensityFn::Ged {
                shape,
                lambda,
                log_norm,
            } => log_norm - 0.5 * (z / lambda).abs().powf(shape),
        }
    }
}

/// Log-density of an innovation with standardized value `z = eps / sigma`,
/// including the `-ln sigma` change-of-variables term.
pub fn loglik_density(z: f64, sigma: f64, dist: DistSpec) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok(DensityFn::new(dist)?.log_density(z) - sigma.ln())
}

#[inline]
fn powd(x: f64, delta: f64) -> f64 {
    if delta == 2.0 {
        x * x
    } else if delta == 1.0 {
        x
    } else {
        x.powf(delta)
    }
}

#[inline]
fn rootd(x: f64, delta: f64) -> f64 {
    if delta == 2.0 {
        x.sqrt()
    } else if delta == 1.0 {
        x
    } else {
        x.powf(1.0 / delta)
    }
}

/// Residuals, conditional scales and log-likelihood from one filter pass.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Mean-equation residuals, one per observation.
    pub residuals: Vec<f64>,
    /// Conditional standard deviations, one per observation, all positive.
    pub sigma: Vec<f64>,
    /// Total log-likelihood (sum of `loglik_per_obs`).
    pub loglik: f64,
    /// Per-observation log-densities; the first `skip` entries are zero and
    /// excluded from the conditional likelihood.
    pub loglik_per_obs: Vec<f64>,
    /// Initialization window length.
    pub skip: usize,
}

/// Values immediately preceding a sample, for continuing a recursion
/// exactly: most recent entry last in each vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PresampleState {
    pub returns: Vec<f64>,
    pub eps: Vec<f64>,
    pub sigma_delta: Vec<f64>,
}

/// Run the volatility recursion over observed returns.
///
/// Initialization: `sigma_t^delta` over the first `max(p, q)` observations is
/// the sample mean of `|r_t - rbar|^delta`; pre-sample returns and residuals
/// are zero. The conditional likelihood skips the first
/// `max(p, q, len(ar), len(ma))` observations.
pub fn filter(returns: &ReturnSeries, params: &AparchParams, dist: DistSpec) -> Result<FilterOutput> {
    filter_impl(returns.values(), params, dist, None)
}

/// Like [`filter`], but continues from explicit presample values instead of
/// the sample-mean initialization; no observations are skipped.
pub fn filter_with_state(
    returns: &ReturnSeries,
    params: &AparchParams,
    dist: DistSpec,
    state: &PresampleState,
) -> Result<FilterOutput> {
    filter_impl(returns.values(), params, dist, Some(state))
}

pub(crate) fn filter_values(
    values: &[f64],
    params: &AparchParams,
    dist: DistSpec,
) -> Result<FilterOutput> {
    filter_impl(values, params, dist, None)
}

fn filter_impl(
    r: &[f64],
    params: &AparchParams,
    dist: DistSpec,
    state: Option<&PresampleState>,
) -> Result<FilterOutput> {
    params.validate()?;
    let density = DensityFn::new(dist)?;
    let n = r.len();
    let (p, q) = params.order();
    let (n_ar, n_ma) = (params.ar.len(), params.ma.len());
    let min_n = p + q + n_ar + n_ma + 1;
    if n < min_n {
        return Err(Error::InsufficientData(format!(
            "filter needs more than {} observations for this order, have {n}",
            min_n - 1
        )));
    }
    if let Some(s) = state {
        let need = params.lookback();
        if s.returns.len() < n_ar || s.eps.len() < n_ma.max(p) || s.sigma_delta.len() < q {
            return Err(Error::InvalidParameter(format!(
                "presample state too short for lookback {need}"
            )));
        }
    }

    // Pre-sample lag access: zero by default, explicit history when given.
    let pre = |v: &[f64], back: usize| -> f64 {
        if back == 0 || back > v.len() {
            0.0
        } else {
            v[v.len() - back]
        }
    };

    let mut eps = vec![0.0; n];
    for t in 0..n {
        let mut e = r[t] - params.mu;
        for (i, &a) in params.ar.iter().enumerate() {
            let lag = i + 1;
            e -= a * if t >= lag {
                r[t - lag]
            } else {
                state.map_or(0.0, |s| pre(&s.returns, lag - t))
            };
        }
        for (j, &m) in params.ma.iter().enumerate() {
            let lag = j + 1;
            e -= m * if t >= lag {
                eps[t - lag]
            } else {
                state.map_or(0.0, |s| pre(&s.eps, lag - t))
            };
        }
        eps[t] = e;
    }

    let delta = params.delta;
    let mut sdelta = vec![0.0; n];
    let init_window = if state.is_some() { 0 } else { p.max(q) };
    if init_window > 0 {
        let rbar = r.iter().sum::<f64>() / n as f64;
        let init = r.iter().map(|&v| powd((v - rbar).abs(), delta)).sum::<f64>() / n as f64;
        if !(init > 0.0) {
            return Err(Error::DegenerateSeries(
                "constant returns; scale recursion cannot initialize".into(),
            ));
        }
        sdelta[..init_window].iter_mut().for_each(|s| *s = init);
    }
    for t in init_window..n {
        let mut s = params.alpha0;
        for (i, &a) in params.alpha.iter().enumerate() {
            let lag = i + 1;
            let e = if t >= lag {
                eps[t - lag]
            } else {
                state.map_or(0.0, |st| pre(&st.eps, lag - t))
            };
            s += a * powd(e.abs() + params.gamma[i] * e, delta);
        }
        for (j, &b) in params.beta.iter().enumerate() {
            let lag = j + 1;
            s += b * if t >= lag {
                sdelta[t - lag]
            } else {
                state.map_or(0.0, |st| pre(&st.sigma_delta, lag - t))
            };
        }
        if !s.is_finite() || !(s > 0.0) {
            return Err(Error::NumericFailure { t });
        }
        sdelta[t] = s;
    }

    let sigma: Vec<f64> = sdelta.iter().map(|&s| rootd(s, delta)).collect();
    let skip = if state.is_some() { 0 } else { params.lookback() };
    let mut loglik_per_obs = vec![0.0; n];
    let mut loglik = 0.0;
    for t in skip..n {
        let s = sigma[t];
        if !s.is_finite() || !(s > 0.0) {
            return Err(Error::NumericFailure { t });
        }
        let ll = density.log_density(eps[t] / s) - s.ln();
        if ll.is_nan() {
            return Err(Error::NumericFailure { t });
        }
        loglik_per_obs[t] = ll;
        loglik += ll;
    }
    Ok(FilterOutput {
        residuals: eps,
        sigma,
        loglik,
        loglik_per_obs,
        skip,
    })
}

enum InnovationSampler {
    Normal(Normal<f64>),
    StudentT { t: StudentT<f64>, scale: f64 },
    Ged { gamma: Gamma<f64>, lambda: f64, inv_shape: f64 },
}

impl InnovationSampler {
    fn new(dist: DistSpec) -> Result<Self> {
        dist.validate()?;
        Ok(match dist {
            DistSpec::Normal => InnovationSampler::Normal(Normal::new(0.0, 1.0).unwrap()),
            DistSpec::StudentT { nu } => InnovationSampler::StudentT {
                t: StudentT::new(nu).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                scale: ((nu - 2.0) / nu).sqrt(),
            },
            DistSpec::Ged { shape } => {
                let lambda = match DensityFn::new(dist)? {
                    DensityFn::Ged { lambda, .. } => lambda,
                    _ => unreachable!(),
                };
                InnovationSampler::Ged {
                    gamma: Gamma::new(1.0 / shape, 1.0)
                        .map_err(|e| Error::InvalidParameter(e.to_string()))?,
                    lambda,
                    inv_shape: 1.0 / shape,
                }
            }
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InnovationSampler::Normal(n) => n.sample(rng),
            InnovationSampler::StudentT { t, scale } => t.sample(rng) * scale,
            // |z| = lambda (2 G)^{1/shape} with G ~ Gamma(1/shape, 1) inverts
            // the GED density; the sign is a fair coin.
            InnovationSampler::Ged {
                gamma,
                lambda,
                inv_shape,
            } => {
                let g: f64 = gamma.sample(rng);
                let mag = lambda * (2.0 * g).powf(*inv_shape);
                if rng.gen::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

/// A simulated path plus everything needed to re-filter it exactly.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: ReturnSeries,
    /// Lagged values immediately before the kept window.
    pub state: PresampleState,
    /// Conditional standard deviations over the kept window.
    pub sigma: Vec<f64>,
}

/// Default warm-up length discarded by [`simulate`].
pub const DEFAULT_BURN_IN: usize = 1000;

/// Draw a path of `n` returns from the process, discarding `burn_in` warm-up
/// steps. Deterministic in `seed`.
pub fn simulate(
    params: &AparchParams,
    dist: DistSpec,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> Result<ReturnSeries> {
    simulate_with_state(params, dist, n, seed, burn_in).map(|o| o.series)
}

/// Like [`simulate`], also returning the scale path and the presample state
/// at the start of the kept window so a filter can reproduce the recursion
/// exactly.
pub fn simulate_with_state(
    params: &AparchParams,
    dist: DistSpec,
    n: usize,
    seed: u64,
    burn_in: usize,
) -> Result<SimOutput> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("cannot simulate 0 steps".into()));
    }
    let sampler = InnovationSampler::new(dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = burn_in + n;
    let delta = params.delta;
    // Arbitrary positive warm-start; the burn-in washes it out.
    let persistence = params.persistence();
    let s_init = if persistence < 1.0 {
        params.alpha0 / (1.0 - persistence)
    } else {
        params.alpha0
    };

    let mut r = vec![0.0; total];
    let mut eps = vec![0.0; total];
    let mut sdelta = vec![0.0; total];
    let mut sigma = vec![0.0; total];
    for t in 0..total {
        let mut s = params.alpha0;
        for (i, &a) in params.alpha.iter().enumerate() {
            let e: f64 = if t > i { eps[t - i - 1] } else { 0.0 };
            s += a * powd(e.abs() + params.gamma[i] * e, delta);
        }
        for (j, &b) in params.beta.iter().enumerate() {
            let sd = if t > j { sdelta[t - j - 1] } else { s_init };
            s += b * sd;
        }
        if !s.is_finite() || !(s > 0.0) {
            return Err(Error::NumericFailure { t });
        }
        sdelta[t] = s;
        sigma[t] = rootd(s, delta);
        eps[t] = sigma[t] * sampler.sample(&mut rng);
        let mut ret = params.mu + eps[t];
        for (i, &a) in params.ar.iter().enumerate() {
            ret += a * if t > i { r[t - i - 1] } else { 0.0 };
        }
        for (j, &m) in params.ma.iter().enumerate() {
            ret += m * if t > j { eps[t - j - 1] } else { 0.0 };
        }
        r[t] = ret;
    }

    let lookback = params.lookback();
    let take_back = |v: &[f64], fill: f64| -> Vec<f64> {
        (0..lookback)
            .map(|i| {
                let back = lookback - i; // lag `back` before the kept window
                if burn_in >= back {
                    v[burn_in - back]
                } else {
                    fill
                }
            })
            .collect()
    };
    let state = PresampleState {
        returns: take_back(&r, 0.0),
        eps: take_back(&eps, 0.0),
        sigma_delta: take_back(&sdelta, s_init),
    };
    let start = chrono::NaiveDate::from_ymd_opt(1998, 1, 2)
        .unwrap()
        .and_hms_opt(8, 0, 0)
        .unwrap();
    let series = ReturnSeries::from_values(r[burn_in..].to_vec(), start, 300, 1)?;
    Ok(SimOutput {
        series,
        state,
        sigma: sigma[burn_in..].to_vec(),
    })
}

/// Intervals for half the expected reversion of a volatility shock:
/// `ln(0.5) / ln(persistence)`. Persistence at or above 1 never reverts
/// (returns infinity); zero or negative persistence is rejected.
pub fn half_life(params: &AparchParams) -> Result<f64> {
    let s = params.persistence();
    if s >= 1.0 {
        return Ok(f64::INFINITY);
    }
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half-life undefined for persistence {s}"
        )));
    }
    Ok(0.5f64.ln() / s.ln())
}

/// Special cases nested inside the general recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelClass {
    Arch,
    Narch,
    LogArch,
    GarchVariance,
    GarchStdDev,
    Tarch,
    Gjr,
    AparchGeneral,
}

impl std::fmt::Display for ModelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ModelClass::Arch => "ARCH",
            ModelClass::Narch => "NARCH",
            ModelClass::LogArch => "Log-ARCH",
            ModelClass::GarchVariance => "GARCH-variance",
            ModelClass::GarchStdDev => "GARCH-stddev",
            ModelClass::Tarch => "TARCH",
            ModelClass::Gjr => "GJR",
            ModelClass::AparchGeneral => "APARCH (general)",
        };
        write!(f, "{name}")
    }
}

/// Default tolerance for [`classify_nested`].
pub const DEFAULT_CLASSIFY_TOL: f64 = 0.05;

/// Match parameters against the nested special cases, most restrictive
/// first. `delta < tol` stands in for the log recursion's `delta -> 0`
/// limit.
pub fn classify_nested(params: &AparchParams, tol: f64) -> ModelClass {
    let near = |x: f64, target: f64| (x - target).abs() <= tol;
    let gamma_zero = params.gamma.iter().all(|&g| g.abs() <= tol);
    let beta_zero = params.beta.iter().all(|&b| b.abs() <= tol);
    let d = params.delta;
    if near(d, 2.0) && gamma_zero && beta_zero {
        ModelClass::Arch
    } else if gamma_zero && beta_zero {
        ModelClass::Narch
    } else if d < tol && gamma_zero {
        ModelClass::LogArch
    } else if near(d, 2.0) && gamma_zero {
        ModelClass::GarchVariance
    } else if near(d, 1.0) && gamma_zero {
        ModelClass::GarchStdDev
    } else if near(d, 1.0) {
        ModelClass::Tarch
    } else if near(d, 2.0) {
        ModelClass::Gjr
    } else {
        ModelClass::AparchGeneral
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::moments;
    use proptest::prelude::*;

    /// Parameter set representative of 5-minute equity-index futures.
    pub(crate) fn equity_index_params() -> AparchParams {
        AparchParams::new(
            0.0,
            vec![],
            vec![],
            0.01,
            vec![0.15],
            vec![0.82],
            vec![-0.09],
            1.07,
        )
        .unwrap()
    }

    /// Parameter set representative of 5-minute bond futures, with ARMA mean
    /// terms.
    pub(crate) fn bond_params() -> AparchParams {
        AparchParams::new(
            0.0,
            vec![0.53],
            vec![-0.57],
            7.10e-4,
            vec![0.11],
            vec![0.86],
            vec![-0.08],
            0.47,
        )
        .unwrap()
    }

    fn series(values: Vec<f64>) -> ReturnSeries {
        let start = chrono::NaiveDate::from_ymd_opt(1998, 1, 2)
            .unwrap()
            .and_hms_opt(9, 0, 0)
            .unwrap();
        ReturnSeries::from_values(values, start, 300, 1).unwrap()
    }

    fn normal_draws(seed: u64, n: usize) -> Vec<f64> {
        use rand_distr::Normal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_scale_loglik_closed_form() {
        // alpha = beta = 0, alpha0 = 1, delta = 2: sigma_t = 1 and the normal
        // likelihood collapses to -(n/2) ln(2 pi) - (1/2) sum r^2.
        let r = normal_draws(1, 500);
        let params =
            AparchParams::new(0.0, vec![], vec![], 1.0, vec![], vec![], vec![], 2.0).unwrap();
        let out = filter(&series(r.clone()), &params, DistSpec::Normal).unwrap();
        let n = r.len() as f64;
        let want = -(n / 2.0) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        assert!((out.loglik - want).abs() < 1e-9, "{} vs {want}", out.loglik);
        assert_eq!(out.skip, 0);
        assert!(out.sigma.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn delta_two_matches_independent_garch_recursion() {
        // Hand-coded variance-GARCH(1,1) with the same initialization.
        let r = normal_draws(2, 2000);
        let (a0, a1, b1, mu) = (0.02, 0.08, 0.9, 0.001);
        let params = AparchParams::new(
            mu,
            vec![],
            vec![],
            a0,
            vec![a1],
            vec![b1],
            vec![0.0],
            2.0,
        )
        .unwrap();
        let out = filter(&series(r.clone()), &params, DistSpec::Normal).unwrap();

        let n = r.len();
        let rbar = r.iter().sum::<f64>() / n as f64;
        let var0 = r.iter().map(|v| (v - rbar).powi(2)).sum::<f64>() / n as f64;
        let mut h = vec![0.0; n];
        h[0] = var0;
        let eps: Vec<f64> = r.iter().map(|v| v - mu).collect();
        for t in 1..n {
            h[t] = a0 + a1 * eps[t - 1] * eps[t - 1] + b1 * h[t - 1];
        }
        let mut ll = 0.0;
        for t in 1..n {
            ll += -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * h[t].ln()
                - 0.5 * eps[t] * eps[t] / h[t];
        }
        for t in 0..n {
            assert!((out.sigma[t] * out.sigma[t] - h[t]).abs() < 1e-12);
        }
        assert!((out.loglik - ll).abs() < 1e-8, "{} vs {ll}", out.loglik);
    }

    #[test]
    fn long_simulation_is_stable() {
        let params = bond_params();
        let out = simulate_with_state(&params, DistSpec::Normal, 50_000, 3, 1000).unwrap();
        assert!(out.sigma.iter().all(|&s| s.is_finite() && s > 0.0));
        let half = out.sigma.len() / 2;
        let m1 = out.sigma[..half].iter().sum::<f64>() / half as f64;
        let m2 = out.sigma[half..].iter().sum::<f64>() / (out.sigma.len() - half) as f64;
        assert!(m1 / m2 > 0.5 && m1 / m2 < 2.0, "{m1} vs {m2}");
    }

    #[test]
    fn density_values() {
        // Standard normal at the mode.
        let v = loglik_density(0.0, 1.0, DistSpec::Normal).unwrap();
        assert!((v - (-0.91894)).abs() < 1e-5, "{v}");
        // GED with tail exponent 2 is the normal for all (z, sigma).
        let ged2 = DistSpec::ged(2.0).unwrap();
        for z in [-3.0, -0.7, 0.0, 0.1, 2.5] {
            for s in [0.2, 1.0, 7.0] {
                let a = loglik_density(z, s, ged2).unwrap();
                let b = loglik_density(z, s, DistSpec::Normal).unwrap();
                assert!((a - b).abs() < 1e-12, "z={z} s={s}: {a} vs {b}");
            }
        }
        // Student-t approaches the normal as nu grows.
        let t_big = DistSpec::student_t(1e6).unwrap();
        let a = loglik_density(1.0, 1.0, t_big).unwrap();
        let b = loglik_density(1.0, 1.0, DistSpec::Normal).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }

    #[test]
    fn densities_integrate_to_one() {
        // Simpson's rule over [-50, 50].
        let dists = [
            DistSpec::Normal,
            DistSpec::student_t(5.0).unwrap(),
            DistSpec::student_t(30.0).unwrap(),
            DistSpec::ged(1.0).unwrap(),
            DistSpec::ged(1.5).unwrap(),
            DistSpec::ged(2.0).unwrap(),
        ];
        let (lo, hi, steps) = (-50.0, 50.0, 100_000usize);
        let h = (hi - lo) / steps as f64;
        for dist in dists {
            let d = DensityFn::new(dist).unwrap();
            let f = |z: f64| d.log_density(z).exp();
            let mut sum = f(lo) + f(hi);
            for i in 1..steps {
                let z = lo + i as f64 * h;
                sum += f(z) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let integral = sum * h / 3.0;
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "{dist:?}: integral {integral}"
            );
        }
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(DistSpec::student_t(2.0).is_err());
        assert!(DistSpec::student_t(-5.0).is_err());
        assert!(DistSpec::ged(0.0).is_err());
        assert!(loglik_density(0.0, 1.0, DistSpec::StudentT { nu: 1.5 }).is_err());
        assert!(loglik_density(0.0, 0.0, DistSpec::Normal).is_err());
    }

    #[test]
    fn sampled_innovations_have_unit_variance() {
        for dist in [
            DistSpec::Normal,
            DistSpec::student_t(5.0).unwrap(),
            DistSpec::ged(1.3).unwrap(),
        ] {
            let sampler = InnovationSampler::new(dist).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let n = 200_000;
            let mut sum2 = 0.0;
            for _ in 0..n {
                let z = sampler.sample(&mut rng);
                sum2 += z * z;
            }
            let var = sum2 / n as f64;
            assert!((var - 1.0).abs() < 0.03, "{dist:?}: variance {var}");
        }
    }

    #[test]
    fn constant_scale_simulation_has_expected_sd() {
        let (alpha0, delta) = (4e-4, 1.3);
        let params =
            AparchParams::new(0.0, vec![], vec![], alpha0, vec![], vec![], vec![], delta).unwrap();
        let s = simulate(&params, DistSpec::Normal, 20_000, 5, 100).unwrap();
        let m = moments(&s).unwrap();
        let want = alpha0.powf(1.0 / delta);
        assert!(
            (m.variance.sqrt() / want - 1.0).abs() < 0.03,
            "{} vs {want}",
            m.variance.sqrt()
        );
    }

    #[test]
    fn simulation_is_deterministic_in_seed() {
        let params = equity_index_params();
        let a = simulate(&params, DistSpec::Normal, 1000, 42, 200).unwrap();
        let b = simulate(&params, DistSpec::Normal, 1000, 42, 200).unwrap();
        let c = simulate(&params, DistSpec::Normal, 1000, 43, 200).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn heteroskedastic_simulation_has_fat_tails() {
        let params = equity_index_params();
        let s = simulate(&params, DistSpec::Normal, 100_000, 6, 1000).unwrap();
        let m = moments(&s).unwrap();
        assert!(m.excess_kurtosis > 0.0, "{}", m.excess_kurtosis);
    }

    #[test]
    fn filter_reproduces_simulated_scale_path() {
        for (params, dist) in [
            (bond_params(), DistSpec::Normal),
            (equity_index_params(), DistSpec::student_t(6.0).unwrap()),
        ] {
            let out = simulate_with_state(&params, dist, 5000, 7, 1000).unwrap();
            let filt = filter_with_state(&out.series, &params, dist, &out.state).unwrap();
            assert_eq!(filt.skip, 0);
            for (t, (a, b)) in filt.sigma.iter().zip(&out.sigma).enumerate() {
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn half_life_reference_values() {
        let p = |a: f64, b: f64| {
            AparchParams::new(0.0, vec![], vec![], 0.01, vec![a], vec![b], vec![0.0], 2.0).unwrap()
        };
        let hl = half_life(&p(0.15, 0.82)).unwrap();
        assert!((hl - 22.7566).abs() < 5e-4, "{hl}");
        assert_eq!((hl * 100.0).round() / 100.0, 22.76);
        let hl = half_life(&p(0.15, 0.62)).unwrap();
        assert!((hl - 2.6520).abs() < 5e-4, "{hl}");
        assert_eq!(half_life(&p(0.25, 0.25)).unwrap(), 1.0);
        assert_eq!(half_life(&p(0.2, 0.8)).unwrap(), f64::INFINITY);
        let no_arch =
            AparchParams::new(0.0, vec![], vec![], 0.01, vec![], vec![], vec![], 2.0).unwrap();
        assert!(half_life(&no_arch).is_err());
    }

    #[test]
    fn classification_table() {
        let build = |alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>, delta: f64| {
            AparchParams::new(0.0, vec![], vec![], 0.01, alpha, beta, gamma, delta).unwrap()
        };
        let tol = DEFAULT_CLASSIFY_TOL;
        let cases = [
            (build(vec![0.3], vec![], vec![0.0], 2.0), ModelClass::Arch),
            (build(vec![0.3], vec![], vec![0.0], 1.3), ModelClass::Narch),
            (build(vec![0.3], vec![0.5], vec![0.0], 0.01), ModelClass::LogArch),
            (
                build(vec![0.1], vec![0.8], vec![0.0], 2.0),
                ModelClass::GarchVariance,
            ),
            (
                build(vec![0.1], vec![0.8], vec![0.0], 1.0),
                ModelClass::GarchStdDev,
            ),
            (build(vec![0.1], vec![0.8], vec![-0.3], 1.0), ModelClass::Tarch),
            (build(vec![0.1], vec![0.8], vec![-0.3], 2.0), ModelClass::Gjr),
            (bond_params(), ModelClass::AparchGeneral),
        ];
        for (params, want) in cases {
            assert_eq!(classify_nested(&params, tol), want, "{params:?}");
        }
        assert_eq!(ModelClass::AparchGeneral.to_string(), "APARCH (general)");
    }

    #[test]
    fn model_json_round_trip() {
        let model = AparchModel {
            params: bond_params(),
            dist: DistSpec::student_t(5.4).unwrap(),
        };
        let text = model.to_json().unwrap();
        assert!(text.contains("\"dist_family\": \"student_t\""));
        assert!(text.contains("\"dist_shape\": 5.4"));
        assert!(text.contains("\"alpha0\""));
        let back = AparchModel::from_json(&text).unwrap();
        assert_eq!(back, model);

        let normal = AparchModel {
            params: equity_index_params(),
            dist: DistSpec::Normal,
        };
        let text = normal.to_json().unwrap();
        assert!(text.contains("\"dist_shape\": null"));
        assert_eq!(AparchModel::from_json(&text).unwrap(), normal);
    }

    #[test]
    fn invalid_params_rejected() {
        // alpha + beta above 1.
        assert!(AparchParams::garch11(0.01, 0.3, 0.75).is_err());
        // negative alpha0.
        assert!(AparchParams::garch11(-0.01, 0.1, 0.8).is_err());
        // gamma outside [-1, 1].
        assert!(
            AparchParams::new(0.0, vec![], vec![], 0.01, vec![0.1], vec![], vec![1.5], 1.0)
                .is_err()
        );
        // gamma/alpha length mismatch.
        assert!(
            AparchParams::new(0.0, vec![], vec![], 0.01, vec![0.1], vec![], vec![], 1.0).is_err()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn filter_scale_always_positive(
            values in proptest::collection::vec(-5.0f64..5.0, 30..120),
            alpha0 in 1e-6f64..0.5,
            persist in 0.0f64..0.99,
            frac in 0.0f64..1.0,
            gamma in -1.0f64..1.0,
            delta in 0.1f64..3.0,
        ) {
            let params = AparchParams::new(
                0.0, vec![], vec![], alpha0,
                vec![persist * frac], vec![persist * (1.0 - frac)], vec![gamma], delta,
            ).unwrap();
            let out = filter(&series(values), &params, DistSpec::Normal).unwrap();
            prop_assert!(out.sigma.iter().all(|&s| s > 0.0 && s.is_finite()));
            let total: f64 = out.loglik_per_obs.iter().sum();
            prop_assert!((total - out.loglik).abs() < 1e-9);
        }

        #[test]
        fn negative_shock_raises_scale_more(
            m in 1e-4f64..10.0,
            gamma in -0.99f64..-0.01,
            delta in 0.2f64..3.0,
        ) {
            let params = AparchParams::new(
                0.0, vec![], vec![], 0.01, vec![0.1], vec![0.8], vec![gamma], delta,
            ).unwrap();
            let base = vec![0.0; 10];
            let mut pos = base.clone();
            let mut neg = base.clone();
            pos[5] = m;
            neg[5] = -m;
            let out_pos = filter(&series(pos), &params, DistSpec::Normal).unwrap();
            let out_neg = filter(&series(neg), &params, DistSpec::Normal).unwrap();
            prop_assert!(out_neg.sigma[6] > out_pos.sigma[6],
                "m={m} gamma={gamma}: {} vs {}", out_neg.sigma[6], out_pos.sigma[6]);
        }
    }
}
