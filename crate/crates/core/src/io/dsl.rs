//! Text format for pulse programs.
//!
//! ```text
//! laser 532nm 4us
//! repeat 4 {
//!   mw pi (0,-1)<->(-1,-1)
//!   mw pi (0,+1)<->(+1,+1)
//!   rf pi (-1,-1)<->(-1,0) fidelity 0.95
//!   rf pi (+1,+1)<->(+1,0)
//!   laser 594nm 700ns
//! }
//! ramsey tau 0..4us step 10ns detuning 5MHz
//! ```

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::pulse::{PulseError, PulseEvent, PulseProgram, Statement, MAX_NESTING, MAX_REPEAT};
use crate::rates::PresetTable;
use crate::spin::{LevelLabel, TransitionKind, TransitionTable};

/// Wavelengths a `laser` statement may name.
pub const WAVELENGTHS: [u16; 3] = [520, 532, 594];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{pos}: {kind}")]
pub struct DslError {
    pub pos: Pos,
    pub kind: DslErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslErrorKind {
    #[error("unexpected character '{0}'")]
    UnexpectedChar(char),
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("expected {expected}, found {found}")]
    Expected { expected: String, found: String },
    #[error("empty program")]
    EmptyProgram,
    #[error("empty repeat body")]
    EmptyBody,
    #[error("unknown wavelength {0}nm")]
    UnknownWavelength(String),
    #[error("unit '{unit}' is not a {what} unit")]
    BadUnit { unit: String, what: &'static str },
    #[error("{0}")]
    OutOfRange(String),
    #[error("repeat count {0} exceeds {MAX_REPEAT}")]
    RepeatTooLarge(u64),
    #[error("repeat blocks nested deeper than {MAX_NESTING}")]
    NestingTooDeep,
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    /// Literal text, parsed value and any letters glued to it.
    Num { text: String, value: f64, unit: String },
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Arrow,
    DotDot,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "'{w}'"),
            Tok::Num { text, unit, .. } => write!(f, "'{text}{unit}'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::LBrace => f.write_str("'{'"),
            Tok::RBrace => f.write_str("'}'"),
            Tok::Comma => f.write_str("','"),
            Tok::Arrow => f.write_str("'<->'"),
            Tok::DotDot => f.write_str("'..'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, col, kind| DslError {
        pos: Pos { line, col },
        kind,
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '{' => {
                i += 1;
                Tok::LBrace
            }
            '}' => {
                i += 1;
                Tok::RBrace
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            '<' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                i += 3;
                Tok::Arrow
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                i += 2;
                Tok::DotDot
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                Tok::Word(chars[start..i].iter().collect())
            }
            c if c.is_ascii_digit() || c == '+' || c == '-' => {
                if c == '+' || c == '-' {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let digits = text.trim_start_matches(['+', '-']);
                if digits.is_empty() {
                    return Err(err(line, col, DslErrorKind::UnexpectedChar(c)));
                }
                let value = text
                    .parse::<f64>()
                    .map_err(|_| err(line, col, DslErrorKind::BadNumber(text.clone())))?;
                let unit_start = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                Tok::Num {
                    text,
                    value,
                    unit: chars[unit_start..i].iter().collect(),
                }
            }
            other => return Err(err(line, col, DslErrorKind::UnexpectedChar(other))),
        };
        col += i - start;
        out.push((tok, pos));
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    presets: &'a PresetTable,
    table: &'a TransitionTable,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, pos: Pos, kind: DslErrorKind) -> Result<T, DslError> {
        Err(DslError { pos, kind })
    }

    fn expected<T>(&self, what: &str) -> Result<T, DslError> {
        self.fail(
            self.pos(),
            DslErrorKind::Expected {
                expected: what.into(),
                found: self.peek().to_string(),
            },
        )
    }

    fn expect(&mut self, tok: Tok) -> Result<(), DslError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.expected(&tok.to_string())
        }
    }

    fn keyword(&mut self, word: &str) -> Result<(), DslError> {
        match self.peek() {
            Tok::Word(w) if w == word => {
                self.bump();
                Ok(())
            }
            _ => self.expected(&format!("'{word}'")),
        }
    }

    fn at_keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w == word)
    }

    fn number(&mut self, what: &str) -> Result<(String, f64, String, Pos), DslError> {
        match self.peek().clone() {
            Tok::Num { text, value, unit } => {
                let pos = self.pos();
                self.bump();
                Ok((text, value, unit, pos))
            }
            _ => self.expected(what),
        }
    }

    fn duration(&mut self) -> Result<f64, DslError> {
        let (_, v, unit, pos) = self.number("a duration")?;
        let ns = match unit.as_str() {
            "ns" => v,
            "" if v == 0.0 => v,
            "us" => v * 1000.0,
            _ => {
                return self.fail(
                    pos,
                    DslErrorKind::BadUnit {
                        unit,
                        what: "duration (ns, us)",
                    },
                )
            }
        };
        if !(ns.is_finite() && ns >= 0.0) {
            return self.fail(pos, DslErrorKind::OutOfRange(format!("duration {ns} ns")));
        }
        Ok(ns)
    }

    fn frequency(&mut self) -> Result<f64, DslError> {
        let (_, v, unit, pos) = self.number("a frequency")?;
        if !v.is_finite() {
            return self.fail(pos, DslErrorKind::OutOfRange(format!("frequency {v}")));
        }
        match unit.as_str() {
            "MHz" => Ok(v),
            "kHz" => Ok(v / 1000.0),
            _ => self.fail(
                pos,
                DslErrorKind::BadUnit {
                    unit,
                    what: "frequency (MHz, kHz)",
                },
            ),
        }
    }

    fn spin_number(&mut self) -> Result<i8, DslError> {
        let (text, v, unit, pos) = self.number("a spin projection (-1, 0, +1)")?;
        if !unit.is_empty() || !["-1", "0", "+1", "1"].contains(&text.as_str()) {
            return self.fail(
                pos,
                DslErrorKind::OutOfRange(format!("spin projection must be -1, 0 or +1, got {text}{unit}")),
            );
        }
        Ok(v as i8)
    }

    fn level(&mut self) -> Result<LevelLabel, DslError> {
        self.expect(Tok::LParen)?;
        let ms = self.spin_number()?;
        self.expect(Tok::Comma)?;
        let mi = self.spin_number()?;
        self.expect(Tok::RParen)?;
        Ok(LevelLabel::new(ms, mi).expect("projections checked"))
    }

    fn program(&mut self) -> Result<PulseProgram, DslError> {
        if *self.peek() == Tok::Eof {
            return self.fail(self.pos(), DslErrorKind::EmptyProgram);
        }
        let mut statements = Vec::new();
        while *self.peek() != Tok::Eof {
            statements.push(self.statement(0)?);
        }
        Ok(PulseProgram::new(statements))
    }

    fn statement(&mut self, depth: usize) -> Result<Statement, DslError> {
        let start = self.pos();
        let word = match self.peek() {
            Tok::Word(w) => w.clone(),
            _ => return self.expected("a statement (laser, mw, rf, ramsey, repeat)"),
        };
        match word.as_str() {
            "laser" => {
                self.bump();
                let (text, v, unit, pos) = self.number("a wavelength")?;
                if unit != "nm" {
                    return self.fail(
                        pos,
                        DslErrorKind::BadUnit {
                            unit,
                            what: "wavelength (nm)",
                        },
                    );
                }
                let nm = WAVELENGTHS
                    .into_iter()
                    .find(|&w| text == w.to_string() && v == f64::from(w));
                let Some(nm) = nm else {
                    return self.fail(pos, DslErrorKind::UnknownWavelength(text));
                };
                let rates = self
                    .presets
                    .get(nm)
                    .map_err(|e| DslError {
                        pos,
                        kind: PulseError::from(e).into(),
                    })?;
                let duration = self.duration()?;
                Ok(Statement::Event(PulseEvent::Laser { rates, duration }))
            }
            "mw" | "rf" => {
                self.bump();
                let kind = if word == "mw" {
                    TransitionKind::Mw
                } else {
                    TransitionKind::Rf
                };
                self.keyword("pi")?;
                let tpos = self.pos();
                let a = self.level()?;
                self.expect(Tok::Arrow)?;
                let b = self.level()?;
                let found = self.table.find(a, b).ok_or(DslError {
                    pos: tpos,
                    kind: PulseError::UnknownTransition { a, b }.into(),
                })?;
                if found.kind != kind {
                    return self.fail(
                        tpos,
                        PulseError::KindMismatch {
                            a,
                            b,
                            expected: kind,
                            actual: found.kind,
                        }
                        .into(),
                    );
                }
                let fidelity = if self.at_keyword("fidelity") {
                    self.bump();
                    let (_, f, unit, pos) = self.number("a fidelity")?;
                    if !unit.is_empty() || !(0.0..=1.0).contains(&f) {
                        return self.fail(
                            pos,
                            DslErrorKind::OutOfRange(format!("fidelity must lie in [0, 1], got {f}{unit}")),
                        );
                    }
                    Some(f)
                } else {
                    None
                };
                Ok(Statement::Event(PulseEvent::SwapPi { kind, a, b, fidelity }))
            }
            "ramsey" => {
                self.bump();
                self.keyword("tau")?;
                let rpos = self.pos();
                let first = self.duration()?;
                let tau_max = if *self.peek() == Tok::DotDot {
                    self.bump();
                    if first != 0.0 {
                        return self.fail(
                            rpos,
                            DslErrorKind::OutOfRange(format!("tau range must start at 0, got {first} ns")),
                        );
                    }
                    self.duration()?
                } else {
                    first
                };
                self.keyword("step")?;
                let spos = self.pos();
                let tau_step = self.duration()?;
                let detuning = if self.at_keyword("detuning") {
                    self.bump();
                    Some(self.frequency()?)
                } else {
                    None
                };
                let event = PulseEvent::RamseyReadout {
                    tau_max,
                    tau_step,
                    detuning,
                };
                event.validate().map_err(|e| DslError {
                    pos: spos,
                    kind: e.into(),
                })?;
                Ok(Statement::Event(event))
            }
            "repeat" => {
                self.bump();
                if depth + 1 > MAX_NESTING {
                    return self.fail(start, DslErrorKind::NestingTooDeep);
                }
                let (text, v, unit, pos) = self.number("a repeat count")?;
                if !unit.is_empty() || text.starts_with(['+', '-']) || text.contains('.') {
                    return self.fail(
                        pos,
                        DslErrorKind::Expected {
                            expected: "a non-negative integer".into(),
                            found: format!("'{text}{unit}'"),
                        },
                    );
                }
                if v > f64::from(MAX_REPEAT) {
                    return self.fail(pos, DslErrorKind::RepeatTooLarge(text.parse().unwrap_or(u64::MAX)));
                }
                let count = v as u32;
                self.expect(Tok::LBrace)?;
                if *self.peek() == Tok::RBrace {
                    return self.fail(self.pos(), DslErrorKind::EmptyBody);
                }
                let mut body = Vec::new();
                while *self.peek() != Tok::RBrace {
                    if *self.peek() == Tok::Eof {
                        return self.expected("'}'");
                    }
                    body.push(self.statement(depth + 1)?);
                }
                self.bump();
                Ok(Statement::Repeat { count, body })
            }
            _ => self.expected("a statement (laser, mw, rf, ramsey, repeat)"),
        }
    }
}

/// Parse `src`, resolving wavelengths against `presets` and transitions
/// against `table`.
pub fn parse_pulse_program(
    src: &str,
    presets: &PresetTable,
    table: &TransitionTable,
) -> Result<PulseProgram, DslError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        at: 0,
        presets,
        table,
    };
    let program = p.program()?;
    program.validate().map_err(|e| DslError {
        pos: Pos { line: 1, col: 1 },
        kind: e.into(),
    })?;
    Ok(program)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrintError {
    #[error("laser pulse has no wavelength to print")]
    MissingWavelength,
}

/// Canonical text of `program`; durations in ns, frequencies in MHz.
pub fn print_pulse_program(program: &PulseProgram) -> Result<String, PrintError> {
    fn stmts(out: &mut String, list: &[Statement], indent: usize) -> Result<(), PrintError> {
        for s in list {
            let pad = "  ".repeat(indent);
            match s {
                Statement::Event(e) => {
                    out.push_str(&pad);
                    event(out, e)?;
                    out.push('\n');
                }
                Statement::Repeat { count, body } => {
                    let _ = writeln!(out, "{pad}repeat {count} {{");
                    stmts(out, body, indent + 1)?;
                    let _ = writeln!(out, "{pad}}}");
                }
            }
        }
        Ok(())
    }
    fn event(out: &mut String, e: &PulseEvent) -> Result<(), PrintError> {
        match e {
            PulseEvent::Laser { rates, duration } => {
                let nm = rates.wavelength_nm.ok_or(PrintError::MissingWavelength)?;
                let _ = write!(out, "laser {nm}nm {duration}ns");
            }
            PulseEvent::SwapPi { kind, a, b, fidelity } => {
                let word = match kind {
                    TransitionKind::Mw => "mw",
                    TransitionKind::Rf => "rf",
                };
                let _ = write!(out, "{word} pi {a}<->{b}");
                if let Some(f) = fidelity {
                    let _ = write!(out, " fidelity {f}");
                }
            }
            PulseEvent::RamseyReadout {
                tau_max,
                tau_step,
                detuning,
            } => {
                let _ = write!(out, "ramsey tau 0ns..{tau_max}ns step {tau_step}ns");
                if let Some(d) = detuning {
                    let _ = write!(out, " detuning {d}MHz");
                }
            }
        }
        Ok(())
    }
    let mut out = String::new();
    stmts(&mut out, &program.statements, 0)?;
    Ok(out)
}
