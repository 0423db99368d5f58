//! Line-oriented pulse-sequence language.
//!
//! ```text
//! NAME   herald_esr
//! SEED   7
//! SHOTS  1000
//! PUMP pm1 40us               # Ex pump to ms = ±1 (optional power)
//! MW 2874MHz 0.2MHz pi        # carrier, Rabi frequency, duration or pi
//! READ 400ns >=1 herald 4.8nW # duration, threshold, label, optional power
//! CONDITION herald counts>=1
//! REPEAT 3
//!   RF 4.9464MHz 10kHz 50us   # optional trailing nucleus: n14, c1, c2
//! END
//! CHECK_CHARGE 0.01
//! ```
//!
//! Keywords and units are case-insensitive. Durations take `ns`, `us`/`µs`,
//! `ms`; frequencies `Hz`, `kHz`, `MHz`, `GHz`; powers `pW`, `nW`, `uW`.
//! Internally everything is µs, MHz and nW.

mod parse;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::{parse_duration, parse_frequency, parse_power, parse_program};
pub use run::{run_program, ProgramSummary, RunOptions, ShotRecord, ShotTable, SHOT_TABLE_HEADER};

use crate::error::{Error, Result};

pub const MAX_REPEAT_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PumpKind {
    /// A1 pump into `ms = 0`.
    Ms0,
    /// Ex pump into `ms = ±1`.
    Pm1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Duration {
    Micros(f64),
    /// Resonant π: `1/(2Ω)`.
    Pi,
}

impl Duration {
    pub fn resolve(self, rabi: f64) -> f64 {
        match self {
            Duration::Micros(t) => t,
            Duration::Pi => {
                if rabi > 0.0 {
                    0.5 / rabi
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predicate {
    AtLeast(u32),
    Below(u32),
}

impl Predicate {
    pub fn holds(self, counts: u32) -> bool {
        match self {
            Predicate::AtLeast(k) => counts >= k,
            Predicate::Below(k) => counts < k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Pump { target: PumpKind, duration: f64, power: Option<f64> },
    Mw { carrier: f64, rabi: f64, duration: Duration },
    Rf { carrier: f64, rabi: f64, duration: Duration, nucleus: usize },
    Read { duration: f64, threshold: u32, label: String, power: Option<f64> },
    Condition { label: String, predicate: Predicate },
    Repeat { n: u32, body: Vec<Located> },
    CheckCharge { p_reject: f64 },
}

/// A statement and its 1-based source line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Located {
    pub line: usize,
    pub statement: Statement,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProtocolProgram {
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub n_shots: Option<usize>,
    pub statements: Vec<Located>,
}

impl ProtocolProgram {
    /// Static checks; a program that passes cannot fail on labels, units
    /// or durations at run time.
    pub fn validate(&self) -> Result<()> {
        let mut labels = Vec::new();
        validate_block(&self.statements, 0, &mut labels)
    }

    /// READ labels in order of first definition.
    pub fn labels(&self) -> Vec<String> {
        fn walk(b: &[Located], out: &mut Vec<String>) {
            for s in b {
                match &s.statement {
                    Statement::Read { label, .. } if !out.contains(label) => out.push(label.clone()),
                    Statement::Repeat { body, .. } => walk(body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.statements, &mut out);
        out
    }

    /// Every MW carrier in the program.
    pub fn mw_carriers(&self) -> Vec<(usize, f64)> {
        fn walk(b: &[Located], out: &mut Vec<(usize, f64)>) {
            for s in b {
                match &s.statement {
                    Statement::Mw { carrier, .. } => out.push((s.line, *carrier)),
                    Statement::Repeat { body, .. } => walk(body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.statements, &mut out);
        out
    }
}

fn invalid(line: usize, msg: impl fmt::Display) -> Error {
    Error::Validation(format!("line {line}: {msg}"))
}

fn validate_block(block: &[Located], nesting: usize, labels: &mut Vec<String>) -> Result<()> {
    for s in block {
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(s.line, format!("{name} must be non-negative, got {v}")))
            }
        };
        match &s.statement {
            Statement::Pump { duration, power, .. } => {
                non_negative("duration", *duration)?;
                if let Some(p) = power {
                    non_negative("power", *p)?;
                }
            }
            Statement::Mw { rabi, duration, carrier } | Statement::Rf { rabi, duration, carrier, .. } => {
                non_negative("Rabi frequency", *rabi)?;
                if !carrier.is_finite() {
                    return Err(invalid(s.line, "carrier must be finite"));
                }
                if let Duration::Micros(t) = duration {
                    non_negative("duration", *t)?;
                }
                if let Statement::Rf { nucleus, .. } = &s.statement {
                    if *nucleus > 2 {
                        return Err(invalid(s.line, format!("no nucleus {nucleus}")));
                    }
                }
            }
            Statement::Read { duration, label, power, .. } => {
                non_negative("duration", *duration)?;
                if let Some(p) = power {
                    non_negative("power", *p)?;
                }
                if !labels.contains(label) {
                    labels.push(label.clone());
                }
            }
            Statement::Condition { label, .. } => {
                if !labels.contains(label) {
                    return Err(invalid(s.line, format!("undefined READ label {label:?}")));
                }
            }
            Statement::Repeat { n, body } => {
                if nesting + 1 > MAX_REPEAT_DEPTH {
                    return Err(invalid(s.line, format!("REPEAT nesting deeper than {MAX_REPEAT_DEPTH}")));
                }
                // a body that never runs defines no labels for what follows
                if *n == 0 {
                    validate_block(body, nesting + 1, &mut labels.clone())?;
                } else {
                    validate_block(body, nesting + 1, labels)?;
                }
            }
            Statement::CheckCharge { p_reject } => {
                if !(0.0..=1.0).contains(p_reject) {
                    return Err(invalid(s.line, format!("rejection probability {p_reject} outside [0, 1]")));
                }
            }
        }
    }
    Ok(())
}

fn fmt_block(f: &mut fmt::Formatter<'_>, block: &[Located], indent: usize) -> fmt::Result {
    let pad = "  ".repeat(indent);
    for s in block {
        write!(f, "{pad}")?;
        match &s.statement {
            Statement::Pump { target, duration, power } => {
                let t = match target {
                    PumpKind::Ms0 => "ms0",
                    PumpKind::Pm1 => "pm1",
                };
                write!(f, "PUMP {t} {duration}us")?;
                if let Some(p) = power {
                    write!(f, " {p}nW")?;
                }
            }
            Statement::Mw { carrier, rabi, duration } => {
                write!(f, "MW {carrier}MHz {rabi}MHz {}", DurationText(*duration))?;
            }
            Statement::Rf { carrier, rabi, duration, nucleus } => {
                let n = ["n14", "c1", "c2"][*nucleus];
                write!(f, "RF {carrier}MHz {rabi}MHz {} {n}", DurationText(*duration))?;
            }
            Statement::Read { duration, threshold, label, power } => {
                write!(f, "READ {duration}us >={threshold} {label}")?;
                if let Some(p) = power {
                    write!(f, " {p}nW")?;
                }
            }
            Statement::Condition { label, predicate } => {
                let p = match predicate {
                    Predicate::AtLeast(k) => format!(">={k}"),
                    Predicate::Below(k) => format!("<{k}"),
                };
                write!(f, "CONDITION {label} counts{p}")?;
            }
            Statement::Repeat { n, body } => {
                writeln!(f, "REPEAT {n}")?;
                fmt_block(f, body, indent + 1)?;
                write!(f, "{pad}END")?;
            }
            Statement::CheckCharge { p_reject } => write!(f, "CHECK_CHARGE {p_reject}")?,
        }
        writeln!(f)?;
    }
    Ok(())
}

struct DurationText(Duration);

impl fmt::Display for DurationText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Duration::Micros(t) => write!(f, "{t}us"),
            Duration::Pi => write!(f, "pi"),
        }
    }
}

/// Canonical text: units normalized, two-space indentation, no comments.
impl fmt::Display for ProtocolProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(n) = &self.name {
            writeln!(f, "NAME {n}")?;
        }
        if let Some(s) = self.seed {
            writeln!(f, "SEED {s}")?;
        }
        if let Some(n) = self.n_shots {
            writeln!(f, "SHOTS {n}")?;
        }
        fmt_block(f, &self.statements, 0)
    }
}

/// Structural equality ignoring source line numbers.
pub fn same_program(a: &ProtocolProgram, b: &ProtocolProgram) -> bool {
    fn strip(b: &[Located]) -> Vec<Statement> {
        b.iter()
            .map(|s| match &s.statement {
                Statement::Repeat { n, body } => Statement::Repeat {
                    n: *n,
                    body: strip(body).into_iter().map(|statement| Located { line: 0, statement }).collect(),
                },
                other => other.clone(),
            })
            .collect()
    }
    a.name == b.name && a.seed == b.seed && a.n_shots == b.n_shots && strip(&a.statements) == strip(&b.statements)
}
