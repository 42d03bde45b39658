//! Laser-driven repolarization as a 9-level rate equation
//! `dP/dt = (M(k_S, k_I) − k_p) P`.
//!
//! Two independent routes are provided: [`evolve_analytic`], the closed-form
//! solution for the state right after a perfect transfer block, and
//! [`evolve_numeric`], a fixed-step RK4 integrator for arbitrary initial
//! states. Each serves as the oracle for the other.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spin::{LevelLabel, DIM};

pub type Matrix9 = SMatrix<f64, DIM, DIM>;
pub type Vector9 = SVector<f64, DIM>;

/// Below this value of |3k_I − k_S|·t the closed form switches to its
/// series expansion around the removable singularity.
pub const DEGENERACY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid rate constant {name} = {value}: {reason}")]
    InvalidRate {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("evolution time must be finite and non-negative, got {0}")]
    NegativeTime(f64),
    #[error("integration step must be finite and positive, got {0}")]
    InvalidStep(f64),
    #[error("invalid population vector: {0}")]
    InvalidPopulation(String),
    #[error("sample times must be non-decreasing")]
    UnsortedTimes,
    #[error("unknown wavelength preset {0} nm")]
    UnknownPreset(u16),
    #[error("malformed preset table: {0}")]
    PresetTable(String),
}

/// Rates in 1/ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// Electron-spin polarization rate.
    pub k_s: f64,
    /// Nuclear-spin depolarization rate.
    pub k_i: f64,
    /// NV⁻ population decay rate.
    pub k_p: f64,
    pub wavelength_nm: Option<u16>,
}

impl RateConstants {
    pub fn new(k_s: f64, k_i: f64, k_p: f64) -> Result<Self, RateError> {
        let r = Self {
            k_s,
            k_i,
            k_p,
            wavelength_nm: None,
        };
        r.validate()?;
        Ok(r)
    }

    /// From time constants in ns; `None` for the decay means no decay.
    pub fn from_time_constants(
        tau_s: f64,
        tau_i: f64,
        tau_p: Option<f64>,
    ) -> Result<Self, RateError> {
        for (name, v) in [("tau_s", tau_s), ("tau_i", tau_i), ("tau_p", tau_p.unwrap_or(1.0))] {
            if !(v.is_finite() && v > 0.0) {
                return Err(RateError::InvalidRate {
                    name,
                    value: v,
                    reason: "time constant must be finite and positive",
                });
            }
        }
        Self::new(1.0 / tau_s, 1.0 / tau_i, tau_p.map_or(0.0, |t| 1.0 / t))
    }

    pub fn with_wavelength(mut self, nm: u16) -> Self {
        self.wavelength_nm = Some(nm);
        self
    }

    pub fn validate(&self) -> Result<(), RateError> {
        let check = |name, value: f64, positive: bool| {
            if !value.is_finite() {
                Err(RateError::InvalidRate {
                    name,
                    value,
                    reason: "must be finite",
                })
            } else if positive && value <= 0.0 {
                Err(RateError::InvalidRate {
                    name,
                    value,
                    reason: "must be positive",
                })
            } else if value < 0.0 {
                Err(RateError::InvalidRate {
                    name,
                    value,
                    reason: "must be non-negative",
                })
            } else {
                Ok(())
            }
        };
        check("k_s", self.k_s, true)?;
        check("k_i", self.k_i, false)?;
        check("k_p", self.k_p, false)
    }

    pub fn tau_s(&self) -> f64 {
        1.0 / self.k_s
    }

    pub fn tau_i(&self) -> f64 {
        1.0 / self.k_i
    }

    pub fn tau_p(&self) -> f64 {
        1.0 / self.k_p
    }
}

/// One `[rates.<nm>]` section: each rate given either as a time constant
/// (ns) or directly as a rate (1/ns).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub tau_s_ns: Option<f64>,
    pub tau_i_ns: Option<f64>,
    pub tau_p_ns: Option<f64>,
    pub k_s: Option<f64>,
    pub k_i: Option<f64>,
    pub k_p: Option<f64>,
}

impl RateEntry {
    pub fn resolve(&self, nm: u16) -> Result<RateConstants, RateError> {
        fn pick(
            name: &'static str,
            tau: Option<f64>,
            rate: Option<f64>,
            required: bool,
        ) -> Result<f64, RateError> {
            match (tau, rate) {
                (Some(_), Some(r)) => Err(RateError::InvalidRate {
                    name,
                    value: r,
                    reason: "give either a time constant or a rate, not both",
                }),
                (Some(t), None) if t.is_finite() && t > 0.0 => Ok(1.0 / t),
                (Some(t), None) => Err(RateError::InvalidRate {
                    name,
                    value: t,
                    reason: "time constant must be finite and positive",
                }),
                (None, Some(r)) => Ok(r),
                (None, None) if required => Err(RateError::InvalidRate {
                    name,
                    value: f64::NAN,
                    reason: "missing",
                }),
                (None, None) => Ok(0.0),
            }
        }
        let k_s = pick("k_s", self.tau_s_ns, self.k_s, true)?;
        let k_i = pick("k_i", self.tau_i_ns, self.k_i, true)?;
        let k_p = pick("k_p", self.tau_p_ns, self.k_p, false)?;
        Ok(RateConstants::new(k_s, k_i, k_p)?.with_wavelength(nm))
    }

    pub fn from_constants(r: &RateConstants) -> Self {
        Self {
            k_s: Some(r.k_s),
            k_i: Some(r.k_i),
            k_p: Some(r.k_p),
            ..Default::default()
        }
    }
}

const BUILTIN_PRESETS: &str = include_str!("../data/presets.toml");

/// Wavelength → rate constants lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetTable {
    presets: BTreeMap<u16, RateConstants>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    rates: BTreeMap<String, RateEntry>,
}

impl PresetTable {
    /// The measured 520/532/594 nm presets shipped with the crate.
    pub fn builtin() -> Self {
        let file: PresetFile = toml::from_str(BUILTIN_PRESETS).expect("builtin presets parse");
        Self::from_entries(&file.rates).expect("builtin presets are valid")
    }

    pub fn from_entries(entries: &BTreeMap<String, RateEntry>) -> Result<Self, RateError> {
        let mut presets = BTreeMap::new();
        for (key, entry) in entries {
            let nm: u16 = key
                .trim_end_matches("nm")
                .parse()
                .map_err(|_| RateError::PresetTable(format!("bad wavelength key {key:?}")))?;
            presets.insert(nm, entry.resolve(nm)?);
        }
        Ok(Self { presets })
    }

    pub fn get(&self, nm: u16) -> Result<RateConstants, RateError> {
        self.presets
            .get(&nm)
            .copied()
            .ok_or(RateError::UnknownPreset(nm))
    }

    /// Insert or replace a preset.
    pub fn set(&mut self, nm: u16, rates: RateConstants) {
        self.presets.insert(nm, rates.with_wavelength(nm));
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = u16> + '_ {
        self.presets.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, RateConstants)> + '_ {
        self.presets.iter().map(|(k, v)| (*k, *v))
    }
}

impl Default for PresetTable {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Nine level populations in [`LevelLabel::ORDER`]. The sum may drop
/// below one when population leaves NV⁻.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationVector(pub [f64; DIM]);

impl PopulationVector {
    pub fn zeros() -> Self {
        Self([0.0; DIM])
    }

    /// Uniform over all nine levels.
    pub fn maximally_mixed() -> Self {
        Self([1.0 / 9.0; DIM])
    }

    /// Electron in m_s = 0, nucleus maximally mixed.
    pub fn electron_polarized() -> Self {
        let mut p = Self::zeros();
        for mi in [-1, 0, 1] {
            p[LevelLabel { ms: 0, mi }] = 1.0 / 3.0;
        }
        p
    }

    /// State just before the repolarizing pulse after a perfect transfer:
    /// one third in each m_I = 0 level.
    pub fn pre_repolarization() -> Self {
        let mut p = Self::zeros();
        for ms in [-1, 0, 1] {
            p[LevelLabel { ms, mi: 0 }] = 1.0 / 3.0;
        }
        p
    }

    pub fn new(values: [f64; DIM]) -> Result<Self, RateError> {
        let p = Self(values);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RateError> {
        if let Some((i, v)) = self.0.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(RateError::InvalidPopulation(format!(
                "entry {} = {v} must be finite and non-negative",
                LevelLabel::ORDER[i]
            )));
        }
        let total = self.total();
        if total > 1.0 + 1e-12 {
            return Err(RateError::InvalidPopulation(format!(
                "total population {total} exceeds 1"
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Populations of `|0,m_I⟩` ordered m_I = −1, 0, +1.
    pub fn ms0_lines(&self) -> [f64; 3] {
        [-1, 0, 1].map(|mi| self[LevelLabel { ms: 0, mi }])
    }

    pub fn as_vector(&self) -> Vector9 {
        Vector9::from_column_slice(&self.0)
    }

    pub fn from_vector(v: &Vector9) -> Self {
        let mut out = [0.0; DIM];
        out.copy_from_slice(v.as_slice());
        Self(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

impl Index<LevelLabel> for PopulationVector {
    type Output = f64;
    fn index(&self, label: LevelLabel) -> &f64 {
        &self.0[label.index()]
    }
}

impl IndexMut<LevelLabel> for PopulationVector {
    fn index_mut(&mut self, label: LevelLabel) -> &mut f64 {
        &mut self.0[label.index()]
    }
}

impl fmt::Display for PopulationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix(pub Matrix9);

impl TransitionMatrix {
    pub fn column_sums(&self) -> [f64; DIM] {
        let mut sums = [0.0; DIM];
        for (j, s) in sums.iter_mut().enumerate() {
            *s = self.0.column(j).sum();
        }
        sums
    }
}

/// Optical pumping channels as (target m_s = 0 row, source m_s = ±1 column)
/// in zero-based indexing.
const PUMP_CHANNELS: [(usize, usize); 6] = [(0, 4), (0, 6), (1, 3), (1, 7), (2, 5), (2, 8)];

pub fn build_transition_matrix(rates: &RateConstants) -> TransitionMatrix {
    let mut m = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = if i == j { -2.0 * rates.k_i } else { rates.k_i };
        }
    }
    for &(row, col) in &PUMP_CHANNELS {
        m[(row, col)] = rates.k_s;
    }
    for i in 3..DIM {
        m[(i, i)] = -rates.k_s;
    }
    TransitionMatrix(m)
}

/// `(e^{−k_S t} − e^{−3k_I t}) / (3k_I − k_S)`, finite through the
/// degenerate point.
fn divided_difference(rates: &RateConstants, t: f64) -> f64 {
    let slow = 3.0 * rates.k_i;
    let delta = slow - rates.k_s;
    let x = delta * t;
    if x.abs() < DEGENERACY_THRESHOLD {
        // e^{−3k_I t}·t·(e^x − 1)/x with the quotient expanded to second order
        (-slow * t).exp() * t * (1.0 + x / 2.0 + x * x / 6.0)
    } else if x.abs() < 1.0 {
        (-slow * t).exp() * x.exp_m1() / delta
    } else {
        ((-rates.k_s * t).exp() - (-slow * t).exp()) / delta
    }
}

/// Closed-form populations at time `t` (ns) starting from
/// [`PopulationVector::pre_repolarization`].
pub fn evolve_analytic(rates: &RateConstants, t: f64) -> Result<PopulationVector, RateError> {
    rates.validate()?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(RateError::NegativeTime(t));
    }
    let decay = (-rates.k_p * t).exp();
    let pumped = (-rates.k_s * t).exp();
    let depol = (-3.0 * rates.k_i * t).exp();
    let g = divided_difference(rates, t);
    // Algebraically identical to the textbook expression
    //   1 − 2k_I/(3k_I−k_S)·e^{−k_S t} − (k_I−k_S)/(3k_I−k_S)·e^{−3k_I t}
    // rewritten so that the 1/(3k_I − k_S) factor only enters through g.
    let outer = 1.0 - depol - 2.0 * rates.k_i * g;
    let center = 1.0 + 2.0 * (rates.k_s - rates.k_i) * g;
    let third = decay / 3.0;
    let mut p = PopulationVector::zeros();
    p[LevelLabel { ms: 0, mi: 1 }] = third * outer;
    p[LevelLabel { ms: 0, mi: -1 }] = third * outer;
    p[LevelLabel { ms: 0, mi: 0 }] = third * center;
    p[LevelLabel { ms: -1, mi: 0 }] = third * pumped;
    p[LevelLabel { ms: 1, mi: 0 }] = third * pumped;
    Ok(p)
}

fn check_time(t: f64) -> Result<(), RateError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(RateError::NegativeTime(t))
    }
}

/// Fixed-step RK4 propagator for `dP/dt = (M − k_p·1) P`.
#[derive(Debug, Clone)]
pub struct Rk4Propagator {
    generator: Matrix9,
    max_step: f64,
}

impl Rk4Propagator {
    pub fn new(rates: &RateConstants, max_step: f64) -> Result<Self, RateError> {
        rates.validate()?;
        if !(max_step.is_finite() && max_step > 0.0) {
            return Err(RateError::InvalidStep(max_step));
        }
        let mut generator = build_transition_matrix(rates).0;
        for i in 0..DIM {
            generator[(i, i)] -= rates.k_p;
        }
        Ok(Self {
            generator,
            max_step,
        })
    }

    fn step(&self, p: &Vector9, h: f64) -> Vector9 {
        let a = &self.generator;
        let k1 = a * p;
        let k2 = a * (p + k1 * (h / 2.0));
        let k3 = a * (p + k2 * (h / 2.0));
        let k4 = a * (p + k3 * h);
        p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// One RK4 step of a linear system is `p ↦ S p` with
    /// `S = 1 + hA + (hA)²/2 + (hA)³/6 + (hA)⁴/24`.
    fn step_matrix(&self, h: f64) -> Matrix9 {
        let ha = self.generator * h;
        let ha2 = ha * ha;
        let ha3 = ha2 * ha;
        let ha4 = ha3 * ha;
        Matrix9::identity() + ha + ha2 / 2.0 + ha3 / 6.0 + ha4 / 24.0
    }

    fn split(&self, duration: f64) -> (u64, f64) {
        let n = (duration / self.max_step).ceil().max(1.0) as u64;
        (n, duration / n as f64)
    }

    /// Advance by `duration` using `n` equal RK4 steps no longer than the
    /// maximum step. `S^n` is formed by repeated squaring.
    pub fn advance(&self, p: &Vector9, duration: f64) -> Vector9 {
        if duration == 0.0 {
            return *p;
        }
        let (mut n, h) = self.split(duration);
        let mut base = self.step_matrix(h);
        let mut state = *p;
        while n > 0 {
            if n & 1 == 1 {
                state = base * state;
            }
            n >>= 1;
            if n > 0 {
                base = base * base;
            }
        }
        state
    }

    /// Same trajectory as [`advance`](Self::advance), stepping explicitly.
    pub fn advance_stepwise(&self, p: &Vector9, duration: f64) -> Vector9 {
        if duration == 0.0 {
            return *p;
        }
        let (n, h) = self.split(duration);
        let mut state = *p;
        for _ in 0..n {
            state = self.step(&state, h);
        }
        state
    }
}

/// Numerically integrate from an arbitrary initial state.
pub fn evolve_numeric(
    rates: &RateConstants,
    p0: &PopulationVector,
    t: f64,
    step: f64,
) -> Result<PopulationVector, RateError> {
    if p0.0.iter().any(|v| !v.is_finite()) {
        return Err(RateError::InvalidPopulation("non-finite entry".into()));
    }
    check_time(t)?;
    let prop = Rk4Propagator::new(rates, step)?;
    Ok(PopulationVector::from_vector(&prop.advance(&p0.as_vector(), t)))
}

/// One integration pass sampled at each of `times` (non-decreasing, ns).
pub fn evolve_numeric_samples(
    rates: &RateConstants,
    p0: &PopulationVector,
    times: &[f64],
    step: f64,
) -> Result<Vec<PopulationVector>, RateError> {
    if p0.0.iter().any(|v| !v.is_finite()) {
        return Err(RateError::InvalidPopulation("non-finite entry".into()));
    }
    let prop = Rk4Propagator::new(rates, step)?;
    let mut out = Vec::with_capacity(times.len());
    let mut state = p0.as_vector();
    let mut now = 0.0;
    for &t in times {
        check_time(t)?;
        if t < now {
            return Err(RateError::UnsortedTimes);
        }
        state = prop.advance(&state, t - now);
        now = t;
        out.push(PopulationVector::from_vector(&state));
    }
    Ok(out)
}

/// Largest entry-wise gap between [`evolve_analytic`] and RK4 over `times`.
pub fn model_discrepancy(rates: &RateConstants, times: &[f64], step: f64) -> Result<f64, RateError> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let numeric = evolve_numeric_samples(rates, &PopulationVector::pre_repolarization(), &sorted, step)?;
    let mut worst = 0.0f64;
    for (&t, p) in sorted.iter().zip(&numeric) {
        worst = worst.max(evolve_analytic(rates, t)?.max_abs_diff(p));
    }
    Ok(worst)
}

/// One line of the closed-form/RK4 equivalence suite.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceCase {
    pub name: String,
    pub rates: RateConstants,
    pub residual: f64,
}

/// Closed form against RK4 (`step` ns) on 0..=5 µs in 10 ns samples, for
/// every preset in `presets` and for 3k_I/k_S ∈ {0.999, 1, 1.001} at the
/// 532 nm k_S.
pub fn equivalence_suite(presets: &PresetTable, step: f64) -> Result<Vec<EquivalenceCase>, RateError> {
    let times: Vec<f64> = (0..=500).map(|k| f64::from(k) * 10.0).collect();
    let mut cases = Vec::new();
    for (nm, rates) in presets.iter() {
        cases.push(EquivalenceCase {
            name: format!("{nm}nm"),
            rates,
            residual: model_discrepancy(&rates, &times, step)?,
        });
    }
    let k_s = presets.get(532).map_or(1.0 / 101.0, |r| r.k_s);
    for ratio in [0.999, 1.0, 1.001] {
        let rates = RateConstants::new(k_s, ratio * k_s / 3.0, 0.0)?;
        cases.push(EquivalenceCase {
            name: format!("3kI/kS={ratio}"),
            rates,
            residual: model_discrepancy(&rates, &times, step)?,
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteadyState {
    Populated(PopulationVector),
    /// k_p > 0: everything eventually leaves NV⁻.
    DecaysToZero,
}

impl SteadyState {
    pub fn vector(&self) -> PopulationVector {
        match self {
            SteadyState::Populated(p) => *p,
            SteadyState::DecaysToZero => PopulationVector::zeros(),
        }
    }
}

/// t → ∞ limit starting from [`PopulationVector::pre_repolarization`].
pub fn steady_state(rates: &RateConstants) -> Result<SteadyState, RateError> {
    steady_state_from(rates, &PopulationVector::pre_repolarization())
}

pub fn steady_state_from(
    rates: &RateConstants,
    p0: &PopulationVector,
) -> Result<SteadyState, RateError> {
    rates.validate()?;
    p0.validate()?;
    if rates.k_p > 0.0 {
        return Ok(SteadyState::DecaysToZero);
    }
    let mut out = PopulationVector::zeros();
    if rates.k_i > 0.0 {
        let share = p0.total() / 3.0;
        for mi in [-1, 0, 1] {
            out[LevelLabel { ms: 0, mi }] = share;
        }
    } else {
        for mi in [-1, 0, 1] {
            out[LevelLabel { ms: 0, mi }] = [-1, 0, 1]
                .iter()
                .map(|&ms| p0[LevelLabel { ms, mi }])
                .sum();
        }
    }
    Ok(SteadyState::Populated(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn l(ms: i8, mi: i8) -> LevelLabel {
        LevelLabel { ms, mi }
    }

    fn preset(nm: u16) -> RateConstants {
        PresetTable::builtin().get(nm).unwrap()
    }

    #[test]
    fn builtin_presets_carry_measured_time_constants() {
        let t = PresetTable::builtin();
        let r520 = t.get(520).unwrap();
        assert_abs_diff_eq!(r520.tau_s(), 170.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r520.tau_i(), 6400.0, epsilon = 1e-9);
        assert_eq!(r520.k_p, 0.0);
        let r532 = t.get(532).unwrap();
        assert_abs_diff_eq!(r532.tau_s(), 101.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r532.tau_i(), 8400.0, epsilon = 1e-9);
        let r594 = t.get(594).unwrap();
        assert_abs_diff_eq!(r594.tau_s(), 110.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r594.tau_i(), 16600.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r594.tau_p(), 20400.0, epsilon = 1e-9);
        assert_eq!(r594.wavelength_nm, Some(594));
        assert!(matches!(t.get(600), Err(RateError::UnknownPreset(600))));
    }

    #[test]
    fn zero_rates_give_zero_matrix() {
        let r = RateConstants {
            k_s: 0.0,
            k_i: 0.0,
            k_p: 0.0,
            wavelength_nm: None,
        };
        assert_eq!(build_transition_matrix(&r).0, Matrix9::zeros());
    }

    #[test]
    fn matrix_matches_printed_layout() {
        let r = preset(594);
        let m = build_transition_matrix(&r).0;
        // 1-based (3,6) and (1,1)
        assert_abs_diff_eq!(m[(2, 5)], 1.0 / 110.0, epsilon = 1e-18);
        assert_abs_diff_eq!(m[(0, 0)], -2.0 / 16600.0, epsilon = 1e-18);
        // the blank (7,6) entry reads as zero
        assert_eq!(m[(6, 5)], 0.0);
        let gains: Vec<(usize, usize)> = (0..DIM)
            .flat_map(|i| (0..DIM).map(move |j| (i, j)))
            .filter(|&(i, j)| i < 3 && j >= 3 && m[(i, j)] != 0.0)
            .map(|(i, j)| (i + 1, j + 1))
            .collect();
        assert_eq!(gains, vec![(1, 5), (1, 7), (2, 4), (2, 8), (3, 6), (3, 9)]);
        for s in build_transition_matrix(&r).column_sums() {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn pump_channels_keep_nuclear_projection() {
        for &(row, col) in &PUMP_CHANNELS {
            let (to, from) = (LevelLabel::ORDER[row], LevelLabel::ORDER[col]);
            assert_eq!(to.ms, 0);
            assert_ne!(from.ms, 0);
            assert_eq!(to.mi, from.mi);
        }
    }

    #[test]
    fn electron_only_matrix() {
        let r = RateConstants::new(0.01, 0.0, 0.0).unwrap();
        let tm = build_transition_matrix(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(tm.0[(i, j)], 0.0);
            }
        }
        assert!(tm.column_sums().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn analytic_at_zero_is_initial_vector() {
        for nm in [520, 532, 594] {
            let p = evolve_analytic(&preset(nm), 0.0).unwrap();
            assert_eq!(p, PopulationVector::pre_repolarization());
        }
    }

    #[test]
    fn analytic_without_nuclear_depolarization() {
        let r = RateConstants::new(1.0 / 101.0, 0.0, 0.0).unwrap();
        for t in [0.0, 10.0, 101.0, 500.0, 3000.0] {
            let p = evolve_analytic(&r, t).unwrap();
            let expected = 1.0 - 2.0 / 3.0 * (-t / 101.0f64).exp();
            assert_abs_diff_eq!(p[l(0, 0)], expected, epsilon = 1e-15);
            assert_eq!(p[l(0, 1)], 0.0);
            assert_eq!(p[l(0, -1)], 0.0);
        }
    }

    #[test]
    fn analytic_matches_rk4_at_500ns_for_532() {
        let r = preset(532);
        let a = evolve_analytic(&r, 500.0).unwrap();
        let n = evolve_numeric(&r, &PopulationVector::pre_repolarization(), 500.0, 0.1).unwrap();
        assert!(a.max_abs_diff(&n) < 1e-9);
        // frozen from the RK4 run
        assert_abs_diff_eq!(n[l(0, 0)], 0.90005032, epsilon = 1e-7);
    }

    #[test]
    fn analytic_matches_textbook_form_away_from_degeneracy() {
        // direct transcription, only valid when 3k_I ≠ k_S
        let r = preset(520);
        let (ks, ki) = (r.k_s, r.k_i);
        let d = 3.0 * ki - ks;
        for t in [0.0, 50.0, 400.0, 2500.0] {
            let es = (-ks * t).exp();
            let ei = (-3.0 * ki * t).exp();
            let outer = (1.0 - 2.0 * ki / d * es - (ki - ks) / d * ei) / 3.0;
            let center = (1.0 - 2.0 * (ki - ks) / d * es + 2.0 * (ki - ks) / d * ei) / 3.0;
            let p = evolve_analytic(&r, t).unwrap();
            assert_abs_diff_eq!(p[l(0, 1)], outer, epsilon = 1e-14);
            assert_abs_diff_eq!(p[l(0, -1)], outer, epsilon = 1e-14);
            assert_abs_diff_eq!(p[l(0, 0)], center, epsilon = 1e-14);
            assert_abs_diff_eq!(p[l(-1, 0)], es / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn degenerate_branch_is_continuous() {
        let ks = 0.01;
        let exact = RateConstants::new(ks, ks / 3.0, 0.0).unwrap();
        let near = RateConstants::new(ks, ks / 3.0 * (1.0 + 1e-9), 0.0).unwrap();
        for t in [1.0, 100.0, 5000.0] {
            let a = evolve_analytic(&exact, t).unwrap();
            let b = evolve_analytic(&near, t).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-9);
            assert!(a.0.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn negative_time_rejected() {
        assert!(matches!(
            evolve_analytic(&preset(532), -1.0),
            Err(RateError::NegativeTime(_))
        ));
        assert!(evolve_numeric(&preset(532), &PopulationVector::maximally_mixed(), -1.0, 0.1).is_err());
        assert!(matches!(
            evolve_numeric(&preset(532), &PopulationVector::maximally_mixed(), 1.0, 0.0),
            Err(RateError::InvalidStep(_))
        ));
        let mut bad = PopulationVector::maximally_mixed();
        bad.0[3] = f64::NAN;
        assert!(evolve_numeric(&preset(532), &bad, 1.0, 0.1).is_err());
    }

    #[test]
    fn squared_step_matrix_matches_explicit_steps() {
        let p0 = PopulationVector::maximally_mixed().as_vector();
        for nm in [520, 532, 594] {
            let prop = Rk4Propagator::new(&preset(nm), 0.1).unwrap();
            for t in [0.05, 1.0, 123.4, 2000.0] {
                let fast = prop.advance(&p0, t);
                let slow = prop.advance_stepwise(&p0, t);
                let d = (fast - slow).amax();
                assert!(d < 1e-12, "{nm} nm at {t} ns: {d:e}");
            }
        }
    }

    #[test]
    fn numeric_zero_time_is_identity() {
        let p0 = PopulationVector::maximally_mixed();
        assert_eq!(evolve_numeric(&preset(594), &p0, 0.0, 0.1).unwrap(), p0);
    }

    #[test]
    fn numeric_matches_analytic_for_594_at_700ns() {
        let r = preset(594);
        let a = evolve_analytic(&r, 700.0).unwrap();
        let n = evolve_numeric(&r, &PopulationVector::pre_repolarization(), 700.0, 0.1).unwrap();
        assert!(a.max_abs_diff(&n) < 1e-9, "{}", a.max_abs_diff(&n));
    }

    #[test]
    fn sampled_integration_matches_single_shots() {
        let r = preset(520);
        let p0 = PopulationVector::maximally_mixed();
        let times = [0.0, 33.3, 100.0, 250.0];
        let samples = evolve_numeric_samples(&r, &p0, &times, 0.5).unwrap();
        for (t, s) in times.iter().zip(&samples) {
            let single = evolve_numeric(&r, &p0, *t, 0.5).unwrap();
            assert!(single.max_abs_diff(s) < 1e-12);
        }
        assert!(matches!(
            evolve_numeric_samples(&r, &p0, &[5.0, 1.0], 0.5),
            Err(RateError::UnsortedTimes)
        ));
    }

    #[test]
    fn steady_states() {
        let ss = steady_state(&preset(532)).unwrap().vector();
        for mi in [-1, 0, 1] {
            assert_abs_diff_eq!(ss[l(0, mi)], 1.0 / 3.0, epsilon = 1e-15);
        }
        let r = RateConstants::new(0.01, 0.0, 0.0).unwrap();
        let ss = steady_state(&r).unwrap().vector();
        assert_eq!(ss.0, [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(steady_state(&preset(594)).unwrap(), SteadyState::DecaysToZero);
        assert_eq!(SteadyState::DecaysToZero.vector(), PopulationVector::zeros());
    }

    #[test]
    fn steady_state_is_long_time_limit() {
        let r = preset(532);
        let late = evolve_analytic(&r, 1e6).unwrap();
        let ss = steady_state(&r).unwrap().vector();
        assert!(late.max_abs_diff(&ss) < 1e-12);
    }

    #[test]
    fn rate_entry_resolution() {
        let e = RateEntry {
            k_s: Some(0.01),
            k_i: Some(1e-4),
            ..Default::default()
        };
        assert_eq!(e.resolve(532).unwrap().k_p, 0.0);
        let both = RateEntry {
            k_s: Some(0.01),
            tau_s_ns: Some(100.0),
            k_i: Some(1e-4),
            ..Default::default()
        };
        assert!(both.resolve(532).is_err());
        let neg = RateEntry {
            k_s: Some(-0.01),
            k_i: Some(1e-4),
            ..Default::default()
        };
        assert!(neg.resolve(532).is_err());
        assert!(RateEntry::default().resolve(532).is_err());
    }

    fn arb_rates() -> impl Strategy<Value = RateConstants> {
        (1e-3f64..0.05, 0.0f64..1e-3, 0.0f64..1e-4)
            .prop_map(|(ks, ki, kp)| RateConstants::new(ks, ki, kp).unwrap())
    }

    fn arb_population() -> impl Strategy<Value = PopulationVector> {
        prop::collection::vec(0.0f64..1.0, DIM).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>().max(1e-9);
            let mut out = [0.0; DIM];
            for (o, x) in out.iter_mut().zip(v) {
                *o = x / s;
            }
            PopulationVector(out)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conservation_without_decay(mut r in arb_rates(), p0 in arb_population(), t in 0.0f64..3000.0) {
            r.k_p = 0.0;
            let n = evolve_numeric(&r, &p0, t, 1.0).unwrap();
            prop_assert!((n.total() - p0.total()).abs() < 1e-12);
            let a = evolve_analytic(&r, t).unwrap();
            prop_assert!((a.total() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn non_negativity_preserved(r in arb_rates(), p0 in arb_population(), t in 0.0f64..5000.0) {
            let n = evolve_numeric(&r, &p0, t, 1.0).unwrap();
            prop_assert!(n.0.iter().all(|v| *v >= 0.0));
            let a = evolve_analytic(&r, t).unwrap();
            prop_assert!(a.0.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn outer_ms0_levels_non_decreasing(mut r in arb_rates(), t in 0.0f64..5000.0, dt in 0.0f64..500.0) {
            r.k_p = 0.0;
            let a = evolve_analytic(&r, t).unwrap();
            let b = evolve_analytic(&r, t + dt).unwrap();
            prop_assert!(b[l(0, 1)] >= a[l(0, 1)] - 1e-15);
            prop_assert!(b[l(0, -1)] >= a[l(0, -1)] - 1e-15);
        }
    }
}
