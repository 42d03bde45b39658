//! Protocol studies: polarization against repolarizing duration, cycle count
//! and pulse fidelity, a constrained grid search over (duration, N), and the
//! signal/polarization tradeoff between two measured spectra.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pulse::{
    apply_laser, run_program, transfer_block, EngineSettings, ProtocolSpec, PulseError, PulseFidelities,
    PulseProgram,
};
use crate::rates::{PopulationVector, PresetTable, RateError};
use crate::readout::{polarization_from_peaks, polarization_of_state, PeakSet, ReadoutError};
use crate::spin::{transition_frequencies, RegisterParams, SpinError};

/// Optimum candidates closer than this in p count as equal.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error("invalid grid value {value} for {variable}")]
    InvalidGridValue { variable: &'static str, value: f64 },
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("no grid point reaches signal {threshold} (best {best_signal})")]
    NoFeasiblePoint { threshold: f64, best_signal: f64 },
    #[error("zero total signal in {0} peak set")]
    ZeroSignal(&'static str),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Duration,
    Cycles,
    Fidelity,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Duration => "duration",
            SweepVariable::Cycles => "cycles",
            SweepVariable::Fidelity => "fidelity",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duration" => Ok(Self::Duration),
            "cycles" => Ok(Self::Cycles),
            "fidelity" => Ok(Self::Fidelity),
            other => Err(format!("unknown sweep variable '{other}'")),
        }
    }
}

/// Everything needed to run the protocol apart from the swept knob.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolContext {
    pub params: RegisterParams,
    pub presets: PresetTable,
    pub protocol: ProtocolSpec,
    pub fidelities: PulseFidelities,
    /// RK4 step (ns).
    pub step: f64,
}

impl Default for ProtocolContext {
    fn default() -> Self {
        Self {
            params: RegisterParams::default(),
            presets: PresetTable::builtin(),
            protocol: ProtocolSpec::default(),
            fidelities: PulseFidelities::PERFECT,
            step: 0.1,
        }
    }
}

impl ProtocolContext {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        self.params.validate()?;
        self.presets.get(self.protocol.init_wavelength)?;
        self.presets.get(self.protocol.repolarize_wavelength)?;
        for f in [self.fidelities.mw, self.fidelities.rf] {
            if !(0.0..=1.0).contains(&f) {
                return Err(PulseError::InvalidFidelity(f).into());
            }
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(RateError::InvalidStep(self.step).into());
        }
        Ok(())
    }

    fn settings(&self, fidelities: PulseFidelities) -> EngineSettings {
        EngineSettings {
            fidelities,
            step: self.step,
            ..EngineSettings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub context: ProtocolContext,
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, values: Vec<f64>, context: ProtocolContext) -> Self {
        Self {
            variable,
            values,
            context,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.values.is_empty() {
            return Err(OptimizerError::EmptyGrid);
        }
        let name = self.variable.name();
        for &v in &self.values {
            let ok = match self.variable {
                SweepVariable::Duration => v.is_finite() && v >= 0.0,
                SweepVariable::Cycles => v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 100.0,
                SweepVariable::Fidelity => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(OptimizerError::InvalidGridValue {
                    variable: name,
                    value: v,
                });
            }
        }
        self.context.validate()
    }
}

/// Inclusive `min, min + step, …, max` grid; the last point is `max` when the
/// step does not divide the span to within 1e-9 of a step.
pub fn range_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, OptimizerError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || step <= 0.0 || max < min {
        return Err(OptimizerError::InvalidRange(format!(
            "min {min}, max {max}, step {step}"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(OptimizerError::InvalidRange(format!("{} points", n + 1)));
    }
    let mut out: Vec<f64> = (0..=n).map(|k| min + k as f64 * step).collect();
    if max - out[n] > 1e-9 * step {
        out.push(max);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// Duration (ns), cycle count or fidelity, depending on the sweep.
    pub value: f64,
    pub p: f64,
    /// m_s = 0 populations for m_I = −1, 0, +1.
    pub lines: [f64; 3],
    pub total: f64,
}

impl SweepPoint {
    fn of_state(value: f64, state: &PopulationVector) -> Result<Self, OptimizerError> {
        let lines = state.ms0_lines();
        Ok(Self {
            value,
            p: polarization_of_state(state)?.p,
            lines,
            total: lines.iter().sum(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},p,amp_m1,amp_0,amp_p1,total\n", self.variable.name());
        for pt in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                pt.value, pt.p, pt.lines[0], pt.lines[1], pt.lines[2], pt.total
            );
        }
        out
    }

    /// Whitespace-separated `value p` pairs.
    pub fn to_two_column(&self) -> String {
        let mut out = String::new();
        for pt in &self.points {
            let _ = writeln!(out, "{} {}", pt.value, pt.p);
        }
        out
    }
}

/// Dispatch on the sweep variable.
pub fn sweep(spec: &SweepSpec) -> Result<SweepCurve, OptimizerError> {
    match spec.variable {
        SweepVariable::Duration => sweep_polarization_vs_duration(spec),
        SweepVariable::Cycles => sweep_polarization_vs_cycles(spec),
        SweepVariable::Fidelity => sweep_polarization_vs_fidelity(spec),
    }
}

/// One transfer block from the electron-polarized state, then a repolarizing
/// pulse of each swept duration.
pub fn sweep_polarization_vs_duration(spec: &SweepSpec) -> Result<SweepCurve, OptimizerError> {
    expect_variable(spec, SweepVariable::Duration)?;
    spec.validate()?;
    let ctx = &spec.context;
    let table = transition_frequencies(&ctx.params)?;
    let start = transfer_block(&PopulationVector::electron_polarized(), &table, ctx.fidelities)?;
    let rates = ctx.presets.get(ctx.protocol.repolarize_wavelength)?;

    let points = spec
        .values
        .iter()
        .map(|&d| SweepPoint::of_state(d, &apply_laser(&start, &rates, d, ctx.step)?))
        .collect::<Result<_, _>>()?;
    Ok(SweepCurve {
        variable: SweepVariable::Duration,
        points,
    })
}

/// Full protocol from the mixed state; p after each requested cycle count.
pub fn sweep_polarization_vs_cycles(spec: &SweepSpec) -> Result<SweepCurve, OptimizerError> {
    expect_variable(spec, SweepVariable::Cycles)?;
    spec.validate()?;
    let max_n = spec.values.iter().fold(0.0f64, |a, &b| a.max(b)) as u32;
    let states = protocol_states(&spec.context, spec.context.protocol.repolarize_duration, max_n, spec.context.fidelities)?;
    let points = spec
        .values
        .iter()
        .map(|&n| SweepPoint::of_state(n, &states[n as usize]))
        .collect::<Result<_, _>>()?;
    Ok(SweepCurve {
        variable: SweepVariable::Cycles,
        points,
    })
}

/// Full protocol with the configured cycle count, MW and RF fidelity both
/// set to each swept value.
pub fn sweep_polarization_vs_fidelity(spec: &SweepSpec) -> Result<SweepCurve, OptimizerError> {
    expect_variable(spec, SweepVariable::Fidelity)?;
    spec.validate()?;
    let ctx = &spec.context;
    let n = ctx.protocol.cycles;
    let points = spec
        .values
        .iter()
        .map(|&f| {
            let states = protocol_states(ctx, ctx.protocol.repolarize_duration, n, PulseFidelities::uniform(f))?;
            SweepPoint::of_state(f, &states[n as usize])
        })
        .collect::<Result<_, _>>()?;
    Ok(SweepCurve {
        variable: SweepVariable::Fidelity,
        points,
    })
}

fn expect_variable(spec: &SweepSpec, v: SweepVariable) -> Result<(), OptimizerError> {
    if spec.variable == v {
        Ok(())
    } else {
        Err(OptimizerError::InvalidRange(format!(
            "expected a {} sweep, got {}",
            v.name(),
            spec.variable.name()
        )))
    }
}

/// States after 0, 1, …, `max_n` cycles of the protocol.
fn protocol_states(
    ctx: &ProtocolContext,
    duration: f64,
    max_n: u32,
    fidelities: PulseFidelities,
) -> Result<Vec<PopulationVector>, OptimizerError> {
    let spec = ProtocolSpec {
        repolarize_duration: duration,
        cycles: max_n,
        readout: None,
        ..ctx.protocol.clone()
    };
    let program = PulseProgram::polarization_protocol(&spec, &ctx.presets)?;
    let table = transition_frequencies(&ctx.params)?;
    let trace = run_program(&program, &table, &ctx.settings(fidelities))?;
    let after_init = trace
        .entries
        .iter()
        .find(|e| e.index == Some(0))
        .map(|e| e.state)
        .expect("protocol starts with a laser pulse");
    let mut states = vec![after_init];
    states.extend(trace.cycle_snapshots().into_iter().map(|(_, s)| s));
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub duration: f64,
    pub cycles: u32,
    pub p: f64,
    /// Total m_s = 0 population at readout.
    pub signal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub best: GridPoint,
    pub threshold: f64,
    /// Every evaluated point, durations outer, N inner, both ascending.
    pub grid: Vec<GridPoint>,
}

impl OptimizeReport {
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("duration_ns,cycles,p,signal,feasible\n");
        for g in &self.grid {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                g.duration,
                g.cycles,
                g.p,
                g.signal,
                u8::from(g.signal >= self.threshold)
            );
        }
        out
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "best_duration_ns = {}\nbest_cycles = {}\np = {}\nsignal = {}\nsignal_min = {}\nevaluated = {}\n",
            self.best.duration,
            self.best.cycles,
            self.best.p,
            self.best.signal,
            self.threshold,
            self.grid.len()
        )
    }
}

/// Exhaustive search over `durations × 1..=max_cycles` maximizing p subject
/// to `signal ≥ threshold`. Ties within [`TIE_TOLERANCE`] go to the smallest
/// N, then the shortest duration.
pub fn optimize_protocol(
    ctx: &ProtocolContext,
    durations: &[f64],
    max_cycles: u32,
    threshold: f64,
) -> Result<OptimizeReport, OptimizerError> {
    if durations.is_empty() || max_cycles == 0 {
        return Err(OptimizerError::EmptyGrid);
    }
    if !threshold.is_finite() {
        return Err(OptimizerError::InvalidRange(format!("signal threshold {threshold}")));
    }
    let check = SweepSpec::new(SweepVariable::Duration, durations.to_vec(), ctx.clone());
    check.validate()?;
    if max_cycles > 100 {
        return Err(OptimizerError::InvalidGridValue {
            variable: "cycles",
            value: max_cycles as f64,
        });
    }

    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut grid = Vec::with_capacity(sorted.len() * max_cycles as usize);
    for &d in &sorted {
        let states = protocol_states(ctx, d, max_cycles, ctx.fidelities)?;
        for n in 1..=max_cycles {
            let s = &states[n as usize];
            let lines = s.ms0_lines();
            grid.push(GridPoint {
                duration: d,
                cycles: n,
                p: polarization_of_state(s)?.p,
                signal: lines.iter().sum(),
            });
        }
    }

    let feasible: Vec<&GridPoint> = grid.iter().filter(|g| g.signal >= threshold).collect();
    let Some(top) = feasible.iter().map(|g| g.p).reduce(f64::max) else {
        return Err(OptimizerError::NoFeasiblePoint {
            threshold,
            best_signal: grid.iter().map(|g| g.signal).fold(f64::NEG_INFINITY, f64::max),
        });
    };
    let best = **feasible
        .iter()
        .filter(|g| g.p >= top - TIE_TOLERANCE)
        .min_by(|a, b| a.cycles.cmp(&b.cycles).then(a.duration.total_cmp(&b.duration)))
        .expect("the maximum is feasible");
    Ok(OptimizeReport {
        best,
        threshold,
        grid,
    })
}

/// Comparison of two readouts, e.g. 532 nm against 594 nm repolarization.
///
/// `averaging_factor` is the extra averaging time needed to recover the
/// signal-to-noise ratio, `1/r² − 1`, assuming SNR grows as √time. A ratio
/// above 1 yields a negative factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffReport {
    pub total_signal_ratio: f64,
    /// Percentage points.
    pub polarization_gain: f64,
    pub averaging_factor: f64,
}

impl TradeoffReport {
    pub fn to_key_value(&self) -> String {
        format!(
            "total_signal_ratio = {}\npolarization_gain_points = {}\naveraging_factor = {}\n",
            self.total_signal_ratio, self.polarization_gain, self.averaging_factor
        )
    }
}

pub fn tradeoff_report(green: &PeakSet, orange: &PeakSet) -> Result<TradeoffReport, OptimizerError> {
    let (tg, to) = (green.total(), orange.total());
    if tg <= 0.0 {
        return Err(OptimizerError::ZeroSignal("reference"));
    }
    if to <= 0.0 {
        return Err(OptimizerError::ZeroSignal("comparison"));
    }
    let r = to / tg;
    let gain = polarization_from_peaks(orange)?.p - polarization_from_peaks(green)?.p;
    Ok(TradeoffReport {
        total_signal_ratio: r,
        polarization_gain: 100.0 * gain,
        averaging_factor: 1.0 / (r * r) - 1.0,
    })
}
