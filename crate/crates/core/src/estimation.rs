//! Rate-constant estimation from line amplitudes measured as a function of
//! the repolarizing pulse length.
//!
//! The model for each duration `t` is `scale · (P₀,₋₁(t), P₀,₀(t), P₀,₊₁(t))`
//! from the closed-form rate solution. Parameters are searched in log space
//! so they stay positive without explicit constraints.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::lm::{self, LmError, LmOptions};
use crate::rates::{evolve_analytic, RateConstants, RateError};

/// Minimum number of rows accepted by [`fit_rate_constants`].
pub const MIN_FIT_ROWS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("need at least {need} data rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("durations must be strictly increasing (row {row})")]
    Unsorted { row: usize },
    #[error("invalid value {value} in row {row}: {reason}")]
    InvalidValue {
        row: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("initial guess must have positive rates")]
    BadGuess,
    #[error("singular Jacobian: the data do not constrain the parameters")]
    SingularJacobian,
    #[error("fit did not converge")]
    NotConverged,
    #[error(transparent)]
    Rate(#[from] RateError),
}

impl From<LmError> for EstimationError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Singular => EstimationError::SingularJacobian,
            LmError::BadStart => EstimationError::NotConverged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsRow {
    /// ns
    pub duration: f64,
    pub a_minus: f64,
    pub a_zero: f64,
    pub a_plus: f64,
    pub sigma: Option<f64>,
}

impl DynamicsRow {
    pub fn amplitudes(&self) -> [f64; 3] {
        [self.a_minus, self.a_zero, self.a_plus]
    }

    pub fn total(&self) -> f64 {
        self.a_minus + self.a_zero + self.a_plus
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicsDataset {
    pub rows: Vec<DynamicsRow>,
}

impl DynamicsDataset {
    pub fn new(rows: Vec<DynamicsRow>) -> Result<Self, EstimationError> {
        let d = Self { rows };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        for (i, row) in self.rows.iter().enumerate() {
            if !(row.duration.is_finite() && row.duration >= 0.0) {
                return Err(EstimationError::InvalidValue {
                    row: i,
                    value: row.duration,
                    reason: "duration must be finite and non-negative",
                });
            }
            for a in row.amplitudes() {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(EstimationError::InvalidValue {
                        row: i,
                        value: a,
                        reason: "amplitude must be finite and non-negative",
                    });
                }
            }
            if let Some(s) = row.sigma {
                if !(s.is_finite() && s > 0.0) {
                    return Err(EstimationError::InvalidValue {
                        row: i,
                        value: s,
                        reason: "sigma must be finite and positive",
                    });
                }
            }
            if i > 0 && row.duration <= self.rows[i - 1].duration {
                return Err(EstimationError::Unsorted { row: i });
            }
        }
        Ok(())
    }

    pub fn durations(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.duration).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(DynamicsRow::total).collect()
    }

    /// Every amplitude (and sigma) multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| DynamicsRow {
                    duration: r.duration,
                    a_minus: r.a_minus * c,
                    a_zero: r.a_zero * c,
                    a_plus: r.a_plus * c,
                    sigma: r.sigma.map(|s| s * c),
                })
                .collect(),
        }
    }
}

/// Model line amplitudes at one duration.
pub fn model_lines(rates: &RateConstants, duration: f64) -> Result<[f64; 3], RateError> {
    Ok(evolve_analytic(rates, duration)?.ms0_lines())
}

/// Model curve plus Gaussian noise of standard deviation `noise_sigma`
/// (a fraction of the unit full-scale amplitude). Draws below zero are
/// clipped, since line intensities are magnitudes. Deterministic per seed.
pub fn synth_dataset(
    rates: &RateConstants,
    durations: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<DynamicsDataset, EstimationError> {
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(EstimationError::InvalidValue {
            row: 0,
            value: noise_sigma,
            reason: "noise sigma must be finite and non-negative",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(durations.len());
    for &t in durations {
        let lines = model_lines(rates, t)?;
        let [a_minus, a_zero, a_plus] =
            lines.map(|a| (a + noise_sigma * normal.sample(&mut rng)).max(0.0));
        rows.push(DynamicsRow {
            duration: t,
            a_minus,
            a_zero,
            a_plus,
            sigma: (noise_sigma > 0.0).then_some(noise_sigma),
        });
    }
    DynamicsDataset::new(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSigmas {
    pub k_s: f64,
    pub k_i: f64,
    /// `None` when k_p was held fixed.
    pub k_p: Option<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub rates: RateConstants,
    pub scale: f64,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub sigmas: FitSigmas,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// 1σ of the electron polarization time constant (ns).
    pub fn tau_s_sigma(&self) -> f64 {
        self.sigmas.k_s / self.rates.k_s.powi(2)
    }

    pub fn tau_i_sigma(&self) -> f64 {
        self.sigmas.k_i / self.rates.k_i.powi(2)
    }

    pub fn tau_p_sigma(&self) -> Option<f64> {
        self.sigmas.k_p.map(|s| s / self.rates.k_p.powi(2))
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("tau_s_ns", format!("{}", self.rates.tau_s()));
        kv("tau_s_sigma_ns", format!("{}", self.tau_s_sigma()));
        kv("tau_i_ns", format!("{}", self.rates.tau_i()));
        kv("tau_i_sigma_ns", format!("{}", self.tau_i_sigma()));
        match self.tau_p_sigma() {
            Some(s) => {
                kv("tau_p_ns", format!("{}", self.rates.tau_p()));
                kv("tau_p_sigma_ns", format!("{s}"));
            }
            None => {
                kv("k_p_fixed", format!("{}", self.rates.k_p));
            }
        }
        kv("scale", format!("{}", self.scale));
        kv("scale_sigma", format!("{}", self.sigmas.scale));
        kv("residual_norm", format!("{}", self.residual_norm));
        kv("iterations", format!("{}", self.iterations));
        kv("converged", format!("{}", self.converged));
        out
    }

    pub const CSV_HEADER: &'static str = "k_s,k_s_sigma,k_i,k_i_sigma,k_p,k_p_sigma,scale,scale_sigma,residual_norm,iterations,converged";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.rates.k_s,
            self.sigmas.k_s,
            self.rates.k_i,
            self.sigmas.k_i,
            self.rates.k_p,
            self.sigmas.k_p.map_or(String::new(), |s| s.to_string()),
            self.scale,
            self.sigmas.scale,
            self.residual_norm,
            self.iterations,
            self.converged
        )
    }
}

struct RateProblem<'a> {
    data: &'a DynamicsDataset,
    fixed_kp: Option<f64>,
}

impl RateProblem<'_> {
    fn unpack(&self, x: &DVector<f64>) -> (RateConstants, f64) {
        let rates = RateConstants {
            k_s: x[0].exp(),
            k_i: x[1].exp(),
            k_p: self.fixed_kp.unwrap_or_else(|| x[3].exp()),
            wavelength_nm: None,
        };
        (rates, x[2].exp())
    }

    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (rates, scale) = self.unpack(x);
        let mut r = Vec::with_capacity(3 * self.data.rows.len());
        for row in &self.data.rows {
            let model = model_lines(&rates, row.duration).ok()?;
            let w = row.sigma.map_or(1.0, |s| 1.0 / s);
            for (y, m) in row.amplitudes().iter().zip(model) {
                r.push((scale * m - y) * w);
            }
        }
        Some(DVector::from_vec(r))
    }
}

/// Least-squares estimate of (k_S, k_I, scale[, k_p]).
pub fn fit_rate_constants(
    data: &DynamicsDataset,
    initial_guess: &RateConstants,
    fit_kp: bool,
) -> Result<FitResult, EstimationError> {
    data.validate()?;
    if data.rows.len() < MIN_FIT_ROWS {
        return Err(EstimationError::TooFewRows {
            need: MIN_FIT_ROWS,
            got: data.rows.len(),
        });
    }
    if !(initial_guess.k_s > 0.0 && initial_guess.k_i > 0.0)
        || (fit_kp && initial_guess.k_p <= 0.0)
    {
        return Err(EstimationError::BadGuess);
    }
    initial_guess.validate()?;

    // Linear least-squares scale for the initial rates.
    let mut num = 0.0;
    let mut den = 0.0;
    for row in &data.rows {
        let model = model_lines(initial_guess, row.duration)?;
        for (y, m) in row.amplitudes().iter().zip(model) {
            num += y * m;
            den += m * m;
        }
    }
    let scale0 = num / den;
    if !(scale0.is_finite() && scale0 > 0.0) {
        return Err(EstimationError::SingularJacobian);
    }

    let problem = RateProblem {
        data,
        fixed_kp: (!fit_kp).then_some(initial_guess.k_p),
    };
    let mut x0 = vec![initial_guess.k_s.ln(), initial_guess.k_i.ln(), scale0.ln()];
    if fit_kp {
        x0.push(initial_guess.k_p.ln());
    }
    let outcome = lm::minimize(
        |x| problem.residuals(x),
        DVector::from_vec(x0),
        &LmOptions::default(),
    )?;
    let cov = outcome
        .covariance()
        .ok_or(EstimationError::SingularJacobian)?;
    let (mut rates, scale) = problem.unpack(&outcome.params);
    rates.wavelength_nm = initial_guess.wavelength_nm;
    // delta method: σ_k = k·σ_{ln k}
    let sd = |i: usize| cov[(i, i)].max(0.0).sqrt();
    let sigmas = FitSigmas {
        k_s: rates.k_s * sd(0),
        k_i: rates.k_i * sd(1),
        k_p: fit_kp.then(|| rates.k_p * sd(3)),
        scale: scale * sd(2),
    };
    Ok(FitResult {
        rates,
        scale,
        residual_norm: outcome.residual_norm(),
        initial_residual_norm: outcome.initial_norm,
        sigmas,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Starting value for k_p: exponential fit to the line totals once the
/// electron spin has repolarized (durations ≥ 10/k_S), falling back to one
/// tenth of the inverse record length.
pub fn decay_rate_guess(data: &DynamicsDataset, k_s: f64) -> f64 {
    let t_max = data.rows.last().map_or(1.0, |r| r.duration.max(1.0));
    let fallback = 0.1 / t_max;
    let (t, y): (Vec<f64>, Vec<f64>) = data
        .rows
        .iter()
        .filter(|r| r.duration * k_s >= 10.0)
        .map(|r| (r.duration, r.total()))
        .unzip();
    match fit_exp_decay(&t, &y) {
        Ok(ExpDecayFit::Decay { tau, .. }) if tau.is_finite() && tau > 0.0 => 1.0 / tau,
        _ => fallback,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpDecayFit {
    Decay {
        /// ns
        tau: f64,
        sigma: f64,
        amplitude: f64,
    },
    /// The totals show no decrease.
    NoDecay { amplitude: f64 },
}

impl ExpDecayFit {
    pub fn tau(&self) -> f64 {
        match self {
            ExpDecayFit::Decay { tau, .. } => *tau,
            ExpDecayFit::NoDecay { .. } => f64::INFINITY,
        }
    }
}

/// Fit `A·e^{−t/τ}` to positive totals.
pub fn fit_exp_decay(durations: &[f64], totals: &[f64]) -> Result<ExpDecayFit, EstimationError> {
    if durations.len() != totals.len() || durations.len() < 3 {
        return Err(EstimationError::TooFewRows {
            need: 3,
            got: durations.len().min(totals.len()),
        });
    }
    for (i, (&t, &y)) in durations.iter().zip(totals).enumerate() {
        if !t.is_finite() {
            return Err(EstimationError::InvalidValue {
                row: i,
                value: t,
                reason: "duration must be finite",
            });
        }
        if !(y.is_finite() && y > 0.0) {
            return Err(EstimationError::InvalidValue {
                row: i,
                value: y,
                reason: "total must be positive",
            });
        }
    }
    // log-linear regression for the starting point
    let n = durations.len() as f64;
    let t_mean = durations.iter().sum::<f64>() / n;
    let l_mean = totals.iter().map(|y| y.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, y) in durations.iter().zip(totals) {
        sxx += (t - t_mean).powi(2);
        sxy += (t - t_mean) * (y.ln() - l_mean);
    }
    if sxx == 0.0 {
        return Err(EstimationError::SingularJacobian);
    }
    let slope = sxy / sxx;
    let x0 = DVector::from_vec(vec![l_mean - slope * t_mean, -slope]);

    // rate rescaled to the data span so both parameters are O(1)
    let span = durations.iter().cloned().fold(f64::MIN, f64::max)
        - durations.iter().cloned().fold(f64::MAX, f64::min);
    let residual = |x: &DVector<f64>| {
        Some(DVector::from_iterator(
            durations.len(),
            durations
                .iter()
                .zip(totals)
                .map(|(t, y)| x[0].exp() * (-x[1] / span * t).exp() - y),
        ))
    };
    let x0 = DVector::from_vec(vec![x0[0], x0[1] * span]);
    let outcome = lm::minimize(residual, x0, &LmOptions::default())?;
    if !outcome.converged {
        return Err(EstimationError::NotConverged);
    }
    let amplitude = outcome.params[0].exp();
    let rate_scaled = outcome.params[1];
    if rate_scaled <= 1e-9 {
        return Ok(ExpDecayFit::NoDecay { amplitude });
    }
    let cov = outcome
        .covariance()
        .ok_or(EstimationError::SingularJacobian)?;
    let rate = rate_scaled / span;
    let tau = 1.0 / rate;
    let sigma_rate = cov[(1, 1)].max(0.0).sqrt() / span;
    Ok(ExpDecayFit::Decay {
        tau,
        sigma: sigma_rate * tau * tau,
        amplitude,
    })
}
