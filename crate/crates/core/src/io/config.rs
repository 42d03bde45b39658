//! TOML run configuration.
//!
//! Every section is optional. Unknown keys are rejected by the TOML layer
//! with a line and column; range errors name the offending key.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::optimizer::{range_grid, ProtocolContext};
use crate::pulse::{EngineSettings, ProtocolSpec, PulseFidelities, MAX_REPEAT};
use crate::rates::{PresetTable, RateConstants, RateEntry};
use crate::readout::{Apodization, ReadoutSettings};
use crate::spin::{RegisterParams, SpinError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    seed: u64,
    register: RegisterParams,
    rates: BTreeMap<String, RateEntry>,
    pulses: RawPulses,
    readout: RawReadout,
    sweep: RawSweep,
    optimize: RawOptimize,
    fit: RawFit,
    synth: RawSynth,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPulses {
    mw_fidelity: f64,
    rf_fidelity: f64,
    init_wavelength: u16,
    init_duration_ns: f64,
    repolarize_wavelength: u16,
    repolarize_duration_ns: f64,
    cycles: u32,
    step_ns: f64,
    mw_duration_ns: f64,
    rf_duration_ns: f64,
}

impl Default for RawPulses {
    fn default() -> Self {
        let engine = EngineSettings::default();
        let spec = ProtocolSpec::default();
        Self {
            mw_fidelity: 0.95,
            rf_fidelity: 0.95,
            init_wavelength: spec.init_wavelength,
            init_duration_ns: spec.init_duration,
            repolarize_wavelength: spec.repolarize_wavelength,
            repolarize_duration_ns: spec.repolarize_duration,
            cycles: 4,
            step_ns: engine.step,
            mw_duration_ns: engine.mw_duration,
            rf_duration_ns: engine.rf_duration,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawApodization {
    None,
    Hann,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawReadout {
    t2_star_ns: f64,
    detuning_mhz: f64,
    tau_max_ns: f64,
    tau_step_ns: f64,
    zero_pad: usize,
    window_mhz: f64,
    reference_mhz: Option<f64>,
    apodization: RawApodization,
}

impl Default for RawReadout {
    fn default() -> Self {
        let r = ReadoutSettings::default();
        Self {
            t2_star_ns: r.t2_star,
            detuning_mhz: r.detuning,
            tau_max_ns: r.tau_max,
            tau_step_ns: r.tau_step,
            zero_pad: r.zero_pad,
            window_mhz: r.window,
            reference_mhz: r.reference,
            apodization: RawApodization::Hann,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    duration_min_ns: f64,
    duration_max_ns: f64,
    duration_step_ns: f64,
    cycles_max: u32,
    fidelities: Vec<f64>,
}

impl Default for RawSweep {
    fn default() -> Self {
        Self {
            duration_min_ns: 0.0,
            duration_max_ns: 3000.0,
            duration_step_ns: 10.0,
            cycles_max: 6,
            fidelities: vec![0.8, 0.85, 0.9, 0.95, 1.0],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOptimize {
    duration_min_ns: f64,
    duration_max_ns: f64,
    duration_step_ns: f64,
    cycles_max: u32,
    signal_min: f64,
}

impl Default for RawOptimize {
    fn default() -> Self {
        Self {
            duration_min_ns: 200.0,
            duration_max_ns: 2000.0,
            duration_step_ns: 100.0,
            cycles_max: 6,
            signal_min: 0.9,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawFit {
    guess_wavelength: u16,
    fit_kp: Option<bool>,
}

impl Default for RawFit {
    fn default() -> Self {
        Self {
            guess_wavelength: 532,
            fit_kp: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSynth {
    wavelength: u16,
    noise_sigma: f64,
    durations_ns: Vec<f64>,
}

impl Default for RawSynth {
    fn default() -> Self {
        Self {
            wavelength: 594,
            noise_sigma: 0.01,
            durations_ns: default_synth_durations(),
        }
    }
}

/// 50 ns steps to 1 µs, then 1.9 µs steps to 20 µs.
pub fn default_synth_durations() -> Vec<f64> {
    (1..=20)
        .map(|k| f64::from(k) * 50.0)
        .chain((1..=10).map(|k| 1000.0 + f64::from(k) * 1900.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrids {
    pub durations: Vec<f64>,
    /// 0..=cycles_max
    pub cycles: Vec<f64>,
    pub fidelities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeGrid {
    pub durations: Vec<f64>,
    pub max_cycles: u32,
    pub signal_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub guess: RateConstants,
    /// Defaults to on when the guess preset is 594 nm.
    pub fit_kp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub rates: RateConstants,
    pub noise_sigma: f64,
    pub durations: Vec<f64>,
}

/// A loaded, range-checked configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub params: RegisterParams,
    pub presets: PresetTable,
    pub protocol: ProtocolSpec,
    pub engine: EngineSettings,
    pub readout: ReadoutSettings,
    pub sweep: SweepGrids,
    pub optimize: OptimizeGrid,
    pub fit: FitOptions,
    pub synth: SynthOptions,
}

impl Default for Config {
    fn default() -> Self {
        load_config("").expect("defaults are valid")
    }
}

impl Config {
    pub fn context(&self) -> ProtocolContext {
        ProtocolContext {
            params: self.params,
            presets: self.presets.clone(),
            protocol: self.protocol.clone(),
            fidelities: self.engine.fidelities,
            step: self.engine.step,
        }
    }
}

fn finite(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} is not finite")))
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be positive")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be non-negative")))
    }
}

fn fraction(key: &str, v: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} outside [0, 1]")))
    }
}

fn preset(presets: &PresetTable, key: &str, nm: u16) -> Result<RateConstants, ConfigError> {
    presets
        .get(nm)
        .map_err(|_| invalid(key, format!("no rate preset for {nm} nm")))
}

fn cycles(key: &str, n: u32, min: u32) -> Result<u32, ConfigError> {
    if (min..=MAX_REPEAT).contains(&n) {
        Ok(n)
    } else {
        Err(invalid(key, format!("{n} outside [{min}, {MAX_REPEAT}]")))
    }
}

fn grid(section: &str, min: f64, max: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    non_negative(&format!("{section}.duration_min_ns"), min)?;
    positive(&format!("{section}.duration_step_ns"), step)?;
    if !(max.is_finite() && max >= min) {
        return Err(invalid(
            format!("{section}.duration_max_ns"),
            format!("{max} must be finite and ≥ duration_min_ns"),
        ));
    }
    range_grid(min, max, step).map_err(|e| invalid(section, e.to_string()))
}

/// Parse and range-check a configuration document.
pub fn load_config(text: &str) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;

    raw.register.validate().map_err(|e| match e {
        SpinError::InvalidParam { name, .. } => invalid(format!("register.{name}"), e.to_string()),
        other => invalid("register", other.to_string()),
    })?;

    let mut presets = PresetTable::builtin();
    for (key, entry) in &raw.rates {
        let nm: u16 = key
            .trim_end_matches("nm")
            .parse()
            .map_err(|_| invalid(format!("rates.{key}"), "section name must be a wavelength in nm"))?;
        let rates = entry
            .resolve(nm)
            .map_err(|e| invalid(format!("rates.{key}"), e.to_string()))?;
        presets.set(nm, rates);
    }

    let p = &raw.pulses;
    let fidelities = PulseFidelities {
        mw: fraction("pulses.mw_fidelity", p.mw_fidelity)?,
        rf: fraction("pulses.rf_fidelity", p.rf_fidelity)?,
    };
    preset(&presets, "pulses.init_wavelength", p.init_wavelength)?;
    preset(&presets, "pulses.repolarize_wavelength", p.repolarize_wavelength)?;
    let protocol = ProtocolSpec {
        init_wavelength: p.init_wavelength,
        init_duration: non_negative("pulses.init_duration_ns", p.init_duration_ns)?,
        repolarize_wavelength: p.repolarize_wavelength,
        repolarize_duration: non_negative("pulses.repolarize_duration_ns", p.repolarize_duration_ns)?,
        cycles: cycles("pulses.cycles", p.cycles, 0)?,
        readout: None,
    };
    let engine = EngineSettings {
        fidelities,
        step: positive("pulses.step_ns", p.step_ns)?,
        mw_duration: non_negative("pulses.mw_duration_ns", p.mw_duration_ns)?,
        rf_duration: non_negative("pulses.rf_duration_ns", p.rf_duration_ns)?,
    };

    let r = &raw.readout;
    let tau_max = positive("readout.tau_max_ns", r.tau_max_ns)?;
    let tau_step = positive("readout.tau_step_ns", r.tau_step_ns)?;
    if tau_step > tau_max {
        return Err(invalid("readout.tau_step_ns", format!("{tau_step} exceeds tau_max_ns {tau_max}")));
    }
    if tau_max / tau_step > 1e7 {
        return Err(invalid("readout.tau_step_ns", "more than 10⁷ samples"));
    }
    if !(1..=64).contains(&r.zero_pad) {
        return Err(invalid("readout.zero_pad", format!("{} outside [1, 64]", r.zero_pad)));
    }
    let readout = ReadoutSettings {
        t2_star: positive("readout.t2_star_ns", r.t2_star_ns)?,
        detuning: finite("readout.detuning_mhz", r.detuning_mhz)?,
        tau_max,
        tau_step,
        zero_pad: r.zero_pad,
        window: positive("readout.window_mhz", r.window_mhz)?,
        reference: r
            .reference_mhz
            .map(|v| finite("readout.reference_mhz", v))
            .transpose()?,
        apodization: match r.apodization {
            RawApodization::None => Apodization::None,
            RawApodization::Hann => Apodization::Hann,
        },
    };

    let s = &raw.sweep;
    if s.fidelities.is_empty() {
        return Err(invalid("sweep.fidelities", "empty list"));
    }
    for &f in &s.fidelities {
        fraction("sweep.fidelities", f)?;
    }
    let sweep = SweepGrids {
        durations: grid("sweep", s.duration_min_ns, s.duration_max_ns, s.duration_step_ns)?,
        cycles: (0..=cycles("sweep.cycles_max", s.cycles_max, 0)?).map(f64::from).collect(),
        fidelities: s.fidelities.clone(),
    };

    let o = &raw.optimize;
    let optimize = OptimizeGrid {
        durations: grid("optimize", o.duration_min_ns, o.duration_max_ns, o.duration_step_ns)?,
        max_cycles: cycles("optimize.cycles_max", o.cycles_max, 1)?,
        signal_min: finite("optimize.signal_min", o.signal_min)?,
    };

    let fit = FitOptions {
        guess: preset(&presets, "fit.guess_wavelength", raw.fit.guess_wavelength)?,
        fit_kp: raw.fit.fit_kp.unwrap_or(raw.fit.guess_wavelength == 594),
    };

    let y = &raw.synth;
    if y.durations_ns.is_empty() {
        return Err(invalid("synth.durations_ns", "empty list"));
    }
    for (i, &d) in y.durations_ns.iter().enumerate() {
        non_negative("synth.durations_ns", d)?;
        if i > 0 && d <= y.durations_ns[i - 1] {
            return Err(invalid("synth.durations_ns", "durations must be strictly increasing"));
        }
    }
    let synth = SynthOptions {
        rates: preset(&presets, "synth.wavelength", y.wavelength)?,
        noise_sigma: non_negative("synth.noise_sigma", y.noise_sigma)?,
        durations: y.durations_ns.clone(),
    };

    Ok(Config {
        seed: raw.seed,
        params: raw.register,
        presets,
        protocol,
        engine,
        readout,
        sweep,
        optimize,
        fit,
        synth,
    })
}
