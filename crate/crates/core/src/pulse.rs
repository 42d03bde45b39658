//! Population-level execution of the polarization protocol: initializing
//! laser, transition-selective MW/RF π pulses, repolarizing laser, Ramsey
//! readout, with optional repetition of the transfer/repolarize block.

use thiserror::Error;

use crate::rates::{evolve_numeric, PopulationVector, PresetTable, RateConstants, RateError};
use crate::spin::{LevelLabel, SpinError, TransitionKind, TransitionTable, PROTOCOL_TRANSITIONS};

/// Upper bound on any repeat count.
pub const MAX_REPEAT: u32 = 100;
/// Deepest allowed nesting of repeat blocks.
pub const MAX_NESTING: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("transition {a}<->{b} is not a protocol transition")]
    UnknownTransition { a: LevelLabel, b: LevelLabel },
    #[error("transition {a}<->{b} is an {actual} transition, not {expected}")]
    KindMismatch {
        a: LevelLabel,
        b: LevelLabel,
        expected: TransitionKind,
        actual: TransitionKind,
    },
    #[error("fidelity {0} outside [0, 1]")]
    InvalidFidelity(f64),
    #[error("laser duration {0} ns must be finite and non-negative")]
    InvalidDuration(f64),
    #[error("repeat count {0} exceeds {MAX_REPEAT}")]
    RepeatTooLarge(u32),
    #[error("repeat blocks nested deeper than {MAX_NESTING}")]
    NestingTooDeep,
    #[error("empty repeat body")]
    EmptyRepeat,
    #[error("invalid readout grid: {0}")]
    InvalidReadout(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error("event {index} ({label}): {source}")]
    AtEvent {
        index: usize,
        label: String,
        source: Box<PulseError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PulseEvent {
    Laser {
        rates: RateConstants,
        /// ns
        duration: f64,
    },
    SwapPi {
        kind: TransitionKind,
        a: LevelLabel,
        b: LevelLabel,
        /// `None` defers to the engine's per-kind fidelity.
        fidelity: Option<f64>,
    },
    RamseyReadout {
        tau_max: f64,
        tau_step: f64,
        /// MHz; `None` defers to the readout settings.
        detuning: Option<f64>,
    },
}

impl PulseEvent {
    pub fn label(&self) -> String {
        match self {
            PulseEvent::Laser { rates, duration } => match rates.wavelength_nm {
                Some(nm) => format!("laser {nm}nm {duration}ns"),
                None => format!("laser {duration}ns"),
            },
            PulseEvent::SwapPi { kind, a, b, .. } => {
                let k = match kind {
                    TransitionKind::Mw => "mw",
                    TransitionKind::Rf => "rf",
                };
                format!("{k} pi {a}<->{b}")
            }
            PulseEvent::RamseyReadout { tau_max, tau_step, .. } => {
                format!("ramsey tau 0..{tau_max}ns step {tau_step}ns")
            }
        }
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        match self {
            PulseEvent::Laser { rates, duration } => {
                rates.validate()?;
                check_duration(*duration)
            }
            PulseEvent::SwapPi { fidelity, .. } => fidelity.map_or(Ok(()), check_fidelity),
            PulseEvent::RamseyReadout {
                tau_max, tau_step, ..
            } => {
                if !(tau_step.is_finite() && *tau_step > 0.0) {
                    return Err(PulseError::InvalidReadout(format!("step {tau_step} ns")));
                }
                if !(tau_max.is_finite() && *tau_max >= 10.0 * tau_step) {
                    return Err(PulseError::InvalidReadout(format!(
                        "tau_max {tau_max} ns shorter than 10 steps"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Event(PulseEvent),
    Repeat { count: u32, body: Vec<Statement> },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseProgram {
    pub statements: Vec<Statement>,
}

impl PulseProgram {
    pub fn new(statements: Vec<Statement>) -> Self {
        Self { statements }
    }

    /// Number of transfer/repolarize cycles: the count of the first
    /// top-level repeat block, 1 if transfer pulses appear unrepeated,
    /// 0 if the program never transfers.
    pub fn cycles(&self) -> u32 {
        for s in &self.statements {
            if let Statement::Repeat { count, .. } = s {
                return *count;
            }
        }
        let transfers = self
            .statements
            .iter()
            .any(|s| matches!(s, Statement::Event(PulseEvent::SwapPi { .. })));
        u32::from(transfers)
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        fn walk(stmts: &[Statement], depth: usize) -> Result<(), PulseError> {
            for s in stmts {
                match s {
                    Statement::Event(e) => e.validate()?,
                    Statement::Repeat { count, body } => {
                        if depth + 1 > MAX_NESTING {
                            return Err(PulseError::NestingTooDeep);
                        }
                        if *count > MAX_REPEAT {
                            return Err(PulseError::RepeatTooLarge(*count));
                        }
                        if body.is_empty() {
                            return Err(PulseError::EmptyRepeat);
                        }
                        walk(body, depth + 1)?;
                    }
                }
            }
            Ok(())
        }
        walk(&self.statements, 0)
    }

    /// Flattened event sequence with the top-level repeat iteration (1-based)
    /// each event belongs to.
    pub fn expand(&self) -> Vec<(Option<u32>, &PulseEvent)> {
        fn walk<'a>(
            stmts: &'a [Statement],
            cycle: Option<u32>,
            out: &mut Vec<(Option<u32>, &'a PulseEvent)>,
        ) {
            for s in stmts {
                match s {
                    Statement::Event(e) => out.push((cycle, e)),
                    Statement::Repeat { count, body } => {
                        for k in 1..=*count {
                            walk(body, cycle.or(Some(k)), out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.statements, None, &mut out);
        out
    }

    /// The four transfer pulses in protocol order.
    pub fn transfer_statements() -> Vec<Statement> {
        PROTOCOL_TRANSITIONS
            .iter()
            .map(|&(a, b, kind)| {
                Statement::Event(PulseEvent::SwapPi {
                    kind,
                    a,
                    b,
                    fidelity: None,
                })
            })
            .collect()
    }

    /// Initializing laser, `cycles` × (transfer block + repolarizing laser),
    /// then an optional Ramsey readout.
    pub fn polarization_protocol(spec: &ProtocolSpec, presets: &PresetTable) -> Result<Self, PulseError> {
        let init = presets.get(spec.init_wavelength)?;
        let repol = presets.get(spec.repolarize_wavelength)?;
        let mut body = Self::transfer_statements();
        body.push(Statement::Event(PulseEvent::Laser {
            rates: repol,
            duration: spec.repolarize_duration,
        }));
        let mut statements = vec![
            Statement::Event(PulseEvent::Laser {
                rates: init,
                duration: spec.init_duration,
            }),
            Statement::Repeat {
                count: spec.cycles,
                body,
            },
        ];
        if let Some((tau_max, tau_step)) = spec.readout {
            statements.push(Statement::Event(PulseEvent::RamseyReadout {
                tau_max,
                tau_step,
                detuning: None,
            }));
        }
        let program = Self { statements };
        program.validate()?;
        Ok(program)
    }
}

/// Parameters of the standard polarization sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub init_wavelength: u16,
    /// ns
    pub init_duration: f64,
    pub repolarize_wavelength: u16,
    /// ns
    pub repolarize_duration: f64,
    pub cycles: u32,
    /// (tau_max, tau_step) in ns
    pub readout: Option<(f64, f64)>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            init_wavelength: 532,
            init_duration: 4000.0,
            repolarize_wavelength: 532,
            repolarize_duration: 500.0,
            cycles: 1,
            readout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseFidelities {
    pub mw: f64,
    pub rf: f64,
}

impl PulseFidelities {
    pub const PERFECT: Self = Self { mw: 1.0, rf: 1.0 };

    pub fn uniform(f: f64) -> Self {
        Self { mw: f, rf: f }
    }

    pub fn for_kind(&self, kind: TransitionKind) -> f64 {
        match kind {
            TransitionKind::Mw => self.mw,
            TransitionKind::Rf => self.rf,
        }
    }
}

impl Default for PulseFidelities {
    fn default() -> Self {
        Self::PERFECT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineSettings {
    pub fidelities: PulseFidelities,
    /// RK4 step for laser evolution (ns).
    pub step: f64,
    /// Pulse lengths, used only for elapsed-time bookkeeping (ns).
    pub mw_duration: f64,
    pub rf_duration: f64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            fidelities: PulseFidelities::PERFECT,
            step: 0.1,
            mw_duration: 1000.0,
            rf_duration: 62_000.0,
        }
    }
}

fn check_fidelity(f: f64) -> Result<(), PulseError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(PulseError::InvalidFidelity(f))
    }
}

fn check_duration(d: f64) -> Result<(), PulseError> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(PulseError::InvalidDuration(d))
    }
}

pub fn apply_laser(
    state: &PopulationVector,
    rates: &RateConstants,
    duration: f64,
    step: f64,
) -> Result<PopulationVector, PulseError> {
    check_duration(duration)?;
    Ok(evolve_numeric(rates, state, duration, step)?)
}

/// Pairwise population mixing `a' = (1−f)a + f b`, `b' = f a + (1−f) b`.
pub fn apply_swap_pi(
    state: &PopulationVector,
    table: &TransitionTable,
    a: LevelLabel,
    b: LevelLabel,
    fidelity: f64,
) -> Result<PopulationVector, PulseError> {
    check_fidelity(fidelity)?;
    table
        .find(a, b)
        .ok_or(PulseError::UnknownTransition { a, b })?;
    Ok(mix(state, a, b, fidelity))
}

fn mix(state: &PopulationVector, a: LevelLabel, b: LevelLabel, f: f64) -> PopulationVector {
    let mut out = *state;
    let (pa, pb) = (state[a], state[b]);
    out[a] = (1.0 - f) * pa + f * pb;
    out[b] = f * pa + (1.0 - f) * pb;
    out
}

/// MW on both electron transitions, then RF on both nuclear transitions.
pub fn transfer_block(
    state: &PopulationVector,
    table: &TransitionTable,
    fidelities: PulseFidelities,
) -> Result<PopulationVector, PulseError> {
    let mut s = *state;
    for &(a, b, kind) in &PROTOCOL_TRANSITIONS {
        s = apply_swap_pi(&s, table, a, b, fidelities.for_kind(kind))?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Ordinal in the expanded event sequence; `None` for the initial state.
    pub index: Option<usize>,
    pub label: String,
    /// Top-level repeat iteration, 1-based.
    pub cycle: Option<u32>,
    /// Elapsed protocol time at the end of the event (ns).
    pub elapsed: f64,
    pub state: PopulationVector,
    /// Set for readout events: (tau_max, tau_step, detuning override).
    pub readout: Option<(f64, f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn final_state(&self) -> &PopulationVector {
        &self.entries.last().expect("trace holds the initial state").state
    }

    /// State at the end of each completed top-level repeat iteration.
    pub fn cycle_snapshots(&self) -> Vec<(u32, PopulationVector)> {
        let mut out: Vec<(u32, PopulationVector)> = Vec::new();
        for e in &self.entries {
            if let Some(c) = e.cycle {
                match out.last_mut() {
                    Some(last) if last.0 == c => last.1 = e.state,
                    _ => out.push((c, e.state)),
                }
            }
        }
        out
    }
}

/// Execute `program` from the maximally mixed NV⁻ state.
pub fn run_program(
    program: &PulseProgram,
    table: &TransitionTable,
    settings: &EngineSettings,
) -> Result<Trace, PulseError> {
    run_program_from(program, table, settings, PopulationVector::maximally_mixed())
}

pub fn run_program_from(
    program: &PulseProgram,
    table: &TransitionTable,
    settings: &EngineSettings,
    initial: PopulationVector,
) -> Result<Trace, PulseError> {
    program.validate()?;
    check_fidelity(settings.fidelities.mw)?;
    check_fidelity(settings.fidelities.rf)?;
    let mut state = initial;
    let mut elapsed = 0.0;
    let mut entries = vec![TraceEntry {
        index: None,
        label: "initial".into(),
        cycle: None,
        elapsed,
        state,
        readout: None,
    }];
    for (index, (cycle, event)) in program.expand().into_iter().enumerate() {
        let wrap = |e: PulseError| PulseError::AtEvent {
            index,
            label: event.label(),
            source: Box::new(e),
        };
        let mut readout = None;
        match event {
            PulseEvent::Laser { rates, duration } => {
                state = apply_laser(&state, rates, *duration, settings.step).map_err(wrap)?;
                elapsed += duration;
            }
            PulseEvent::SwapPi {
                kind,
                a,
                b,
                fidelity,
            } => {
                let t = table
                    .find(*a, *b)
                    .ok_or(PulseError::UnknownTransition { a: *a, b: *b })
                    .map_err(wrap)?;
                if t.kind != *kind {
                    return Err(wrap(PulseError::KindMismatch {
                        a: *a,
                        b: *b,
                        expected: *kind,
                        actual: t.kind,
                    }));
                }
                let f = fidelity.unwrap_or_else(|| settings.fidelities.for_kind(*kind));
                state = apply_swap_pi(&state, table, *a, *b, f).map_err(wrap)?;
                elapsed += match kind {
                    TransitionKind::Mw => settings.mw_duration,
                    TransitionKind::Rf => settings.rf_duration,
                };
            }
            PulseEvent::RamseyReadout {
                tau_max,
                tau_step,
                detuning,
            } => {
                readout = Some((*tau_max, *tau_step, *detuning));
                elapsed += tau_max;
            }
        }
        entries.push(TraceEntry {
            index: Some(index),
            label: event.label(),
            cycle,
            elapsed,
            state,
            readout,
        });
    }
    Ok(Trace { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{transition_frequencies, RegisterParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn l(ms: i8, mi: i8) -> LevelLabel {
        LevelLabel { ms, mi }
    }

    fn table() -> TransitionTable {
        transition_frequencies(&RegisterParams::default()).unwrap()
    }

    fn state_with(pairs: &[(LevelLabel, f64)]) -> PopulationVector {
        let mut p = PopulationVector::zeros();
        for &(lab, v) in pairs {
            p[lab] = v;
        }
        p
    }

    #[test]
    fn perfect_swap() {
        let s = state_with(&[(l(0, -1), 1.0 / 3.0)]);
        let out = apply_swap_pi(&s, &table(), l(0, -1), l(-1, -1), 1.0).unwrap();
        assert_eq!(out[l(0, -1)], 0.0);
        assert_eq!(out[l(-1, -1)], 1.0 / 3.0);
    }

    #[test]
    fn zero_fidelity_is_identity() {
        let s = PopulationVector::maximally_mixed();
        let out = apply_swap_pi(&s, &table(), l(0, 1), l(1, 1), 0.0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn partial_swap_arithmetic() {
        let s = state_with(&[(l(0, -1), 1.0 / 3.0)]);
        let out = apply_swap_pi(&s, &table(), l(0, -1), l(-1, -1), 0.95).unwrap();
        assert_abs_diff_eq!(out[l(0, -1)], 1.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[l(-1, -1)], 19.0 / 60.0, epsilon = 1e-15);
    }

    #[test]
    fn swap_errors() {
        let s = PopulationVector::maximally_mixed();
        assert!(matches!(
            apply_swap_pi(&s, &table(), l(0, -1), l(1, -1), 1.0),
            Err(PulseError::UnknownTransition { .. })
        ));
        assert!(matches!(
            apply_swap_pi(&s, &table(), l(0, -1), l(-1, -1), 1.5),
            Err(PulseError::InvalidFidelity(_))
        ));
    }

    #[test]
    fn transfer_of_electron_polarized_state() {
        let out = transfer_block(&PopulationVector::electron_polarized(), &table(), PulseFidelities::PERFECT).unwrap();
        assert_eq!(out, PopulationVector::pre_repolarization());
    }

    #[test]
    fn fully_polarized_state_unchanged() {
        let s = state_with(&[(l(0, 0), 1.0)]);
        assert_eq!(transfer_block(&s, &table(), PulseFidelities::PERFECT).unwrap(), s);
    }

    #[test]
    fn imperfect_mw_leaves_residual() {
        let s = PopulationVector::electron_polarized();
        let mut after_mw = s;
        for &(a, b, kind) in PROTOCOL_TRANSITIONS.iter().filter(|t| t.2 == TransitionKind::Mw) {
            let _ = kind;
            after_mw = apply_swap_pi(&after_mw, &table(), a, b, 0.9).unwrap();
        }
        assert_abs_diff_eq!(after_mw[l(0, -1)], 1.0 / 30.0, epsilon = 1e-15);
        assert_abs_diff_eq!(after_mw[l(0, 1)], 1.0 / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn laser_zero_duration_identity() {
        let r = PresetTable::builtin().get(532).unwrap();
        let s = PopulationVector::maximally_mixed();
        assert_eq!(apply_laser(&s, &r, 0.0, 0.1).unwrap(), s);
        assert!(apply_laser(&s, &r, -5.0, 0.1).is_err());
    }

    #[test]
    fn long_green_pulse_polarizes_electron() {
        let r = PresetTable::builtin().get(532).unwrap();
        let out = apply_laser(&PopulationVector::maximally_mixed(), &r, 4000.0, 0.1).unwrap();
        let ms0: f64 = out.ms0_lines().iter().sum();
        assert!(ms0 / out.total() > 0.99);
        for v in out.ms0_lines() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn orange_decay_time_constant() {
        let r = PresetTable::builtin().get(594).unwrap();
        let out = apply_laser(&PopulationVector::maximally_mixed(), &r, 20_400.0, 0.1).unwrap();
        assert_abs_diff_eq!(out.total(), (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn empty_program_returns_mixed_state() {
        let trace = run_program(&PulseProgram::default(), &table(), &EngineSettings::default()).unwrap();
        assert_eq!(trace.entries.len(), 1);
        assert_abs_diff_eq!(trace.final_state().total(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn protocol_structure_and_cycles() {
        let presets = PresetTable::builtin();
        let spec = ProtocolSpec {
            cycles: 4,
            readout: Some((4000.0, 10.0)),
            ..Default::default()
        };
        let prog = PulseProgram::polarization_protocol(&spec, &presets).unwrap();
        assert_eq!(prog.cycles(), 4);
        // init + 4 × (4 swaps + laser) + readout
        assert_eq!(prog.expand().len(), 1 + 4 * 5 + 1);
        let trace = run_program(&prog, &table(), &EngineSettings::default()).unwrap();
        let snaps = trace.cycle_snapshots();
        assert_eq!(snaps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(trace.entries.last().unwrap().readout.is_some());
    }

    #[test]
    fn kind_mismatch_reported_with_index() {
        let prog = PulseProgram::new(vec![Statement::Event(PulseEvent::SwapPi {
            kind: TransitionKind::Rf,
            a: l(0, -1),
            b: l(-1, -1),
            fidelity: None,
        })]);
        let err = run_program(&prog, &table(), &EngineSettings::default()).unwrap_err();
        match err {
            PulseError::AtEvent { index, source, .. } => {
                assert_eq!(index, 0);
                assert!(matches!(*source, PulseError::KindMismatch { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nesting_and_count_limits() {
        let ev = Statement::Event(PulseEvent::SwapPi {
            kind: TransitionKind::Mw,
            a: l(0, -1),
            b: l(-1, -1),
            fidelity: None,
        });
        let depth2 = Statement::Repeat {
            count: 2,
            body: vec![Statement::Repeat {
                count: 2,
                body: vec![ev.clone()],
            }],
        };
        assert!(PulseProgram::new(vec![depth2.clone()]).validate().is_ok());
        let depth3 = Statement::Repeat {
            count: 2,
            body: vec![depth2],
        };
        assert_eq!(
            PulseProgram::new(vec![depth3]).validate(),
            Err(PulseError::NestingTooDeep)
        );
        let big = Statement::Repeat {
            count: 101,
            body: vec![ev],
        };
        assert_eq!(
            PulseProgram::new(vec![big]).validate(),
            Err(PulseError::RepeatTooLarge(101))
        );
    }

    fn arb_population() -> impl Strategy<Value = PopulationVector> {
        prop::collection::vec(0.0f64..1.0, 9).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>().max(1e-9);
            let mut out = [0.0; 9];
            for (o, x) in out.iter_mut().zip(v) {
                *o = x / s;
            }
            PopulationVector(out)
        })
    }

    proptest! {
        #[test]
        fn swap_is_involution_at_unit_fidelity(s in arb_population(), k in 0usize..4) {
            let (a, b, _) = PROTOCOL_TRANSITIONS[k];
            let t = table();
            let once = apply_swap_pi(&s, &t, a, b, 1.0).unwrap();
            let twice = apply_swap_pi(&once, &t, a, b, 1.0).unwrap();
            prop_assert_eq!(twice, s);
        }

        #[test]
        fn swap_is_linear(s1 in arb_population(), s2 in arb_population(), c in 0.0f64..1.0, f in 0.0f64..=1.0) {
            let (a, b, _) = PROTOCOL_TRANSITIONS[0];
            let t = table();
            let mut mixed = PopulationVector::zeros();
            for i in 0..9 {
                mixed.0[i] = c * s1.0[i] + (1.0 - c) * s2.0[i];
            }
            let lhs = apply_swap_pi(&mixed, &t, a, b, f).unwrap();
            let r1 = apply_swap_pi(&s1, &t, a, b, f).unwrap();
            let r2 = apply_swap_pi(&s2, &t, a, b, f).unwrap();
            for i in 0..9 {
                prop_assert!((lhs.0[i] - (c * r1.0[i] + (1.0 - c) * r2.0[i])).abs() < 1e-14);
            }
        }

        #[test]
        fn events_keep_states_valid(s in arb_population(), f in 0.0f64..=1.0, d in 0.0f64..2000.0) {
            let t = table();
            let after = transfer_block(&s, &t, PulseFidelities::uniform(f)).unwrap();
            prop_assert!(after.0.iter().all(|v| *v >= 0.0));
            prop_assert!((after.total() - s.total()).abs() < 1e-14);
            let r = PresetTable::builtin().get(594).unwrap();
            let lit = apply_laser(&after, &r, d, 1.0).unwrap();
            prop_assert!(lit.0.iter().all(|v| *v >= 0.0));
            prop_assert!(lit.total() <= after.total() + 1e-14);
        }

        #[test]
        fn electron_polarized_maps_to_central_level(w in prop::array::uniform3(0.0f64..1.0)) {
            let mut s = PopulationVector::zeros();
            for (mi, v) in [-1i8, 0, 1].iter().zip(w) {
                s[l(0, *mi)] = v / 3.0;
            }
            let out = transfer_block(&s, &table(), PulseFidelities::PERFECT).unwrap();
            prop_assert_eq!(out[l(0, 1)], 0.0);
            prop_assert_eq!(out[l(0, -1)], 0.0);
        }
    }
}
