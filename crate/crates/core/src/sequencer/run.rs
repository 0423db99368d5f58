use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Located, ProtocolProgram, PumpKind, Statement};
use crate::dynamics::Drive;
use crate::error::{Error, Result};
use crate::gates::{mw_pulse, rf_pulse, PulseParams};
use crate::protocols::experiments::Proportion;
use crate::protocols::nuclear::unpolarized;
use crate::protocols::{charge_resonance_check, try_run_shots, Setup};
use crate::register::{ElectronLevel, Ms, RegisterState};
use crate::rng::ShotRng;

const LABEL: u64 = 0x5345_5150;

/// Strict mode rejects MW carriers farther than this many linewidths from
/// every enumerated line.
pub const STRICT_LINEWIDTHS: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub strict: bool,
}

/// One row of the shot table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: usize,
    pub accepted: bool,
    /// Empty for accepted shots.
    pub reason: String,
    /// Final electron state (`ms0`, `ms-1`, `ms+1`).
    pub electron: String,
    pub nuclei: String,
    /// Every executed READ as `label=counts`, `;`-separated, in order.
    pub reads: String,
}

pub const SHOT_TABLE_HEADER: [&str; 6] = ["shot", "accepted", "reason", "electron", "nuclei", "reads"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotTable {
    pub name: Option<String>,
    pub seed: u64,
    pub labels: Vec<String>,
    pub records: Vec<ShotRecord>,
}

impl ShotTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        crate::protocols::export::write_csv_with_header(&mut buf, &SHOT_TABLE_HEADER, &self.records)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// `(label, counts)` pairs of one record.
    pub fn reads(record: &ShotRecord) -> Vec<(&str, u32)> {
        record
            .reads
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| {
                let (l, c) = s.split_once('=')?;
                Some((l, c.parse().ok()?))
            })
            .collect()
    }

    pub fn summary(&self) -> ProgramSummary {
        let accepted: Vec<&ShotRecord> = self.records.iter().filter(|r| r.accepted).collect();
        let labels = self
            .labels
            .iter()
            .map(|l| {
                let last: Vec<u32> = accepted
                    .iter()
                    .filter_map(|r| ShotTable::reads(r).into_iter().filter(|(x, _)| x == l).map(|(_, c)| c).last())
                    .collect();
                let mean = if last.is_empty() { f64::NAN } else { last.iter().map(|&c| c as f64).sum::<f64>() / last.len() as f64 };
                LabelSummary { label: l.clone(), n: last.len(), mean_counts: mean }
            })
            .collect();
        let mut reasons: Vec<(String, usize)> = Vec::new();
        for r in self.records.iter().filter(|r| !r.accepted) {
            match reasons.iter_mut().find(|(x, _)| *x == r.reason) {
                Some(e) => e.1 += 1,
                None => reasons.push((r.reason.clone(), 1)),
            }
        }
        ProgramSummary {
            name: self.name.clone(),
            seed: self.seed,
            n_shots: self.records.len(),
            accepted: Proportion::from_counts(accepted.len(), self.records.len()),
            rejections: reasons.into_iter().map(|(reason, count)| Rejection { reason, count }).collect(),
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: String,
    /// Accepted shots that executed this READ.
    pub n: usize,
    /// Mean of the last counts of this label over those shots.
    pub mean_counts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSummary {
    pub name: Option<String>,
    pub seed: u64,
    pub n_shots: usize,
    pub accepted: Proportion,
    pub rejections: Vec<Rejection>,
    pub labels: Vec<LabelSummary>,
}

fn electron_text(s: &RegisterState) -> String {
    match s.electron {
        ElectronLevel::Ground(Ms::Zero) => "ms0".into(),
        ElectronLevel::Ground(Ms::Minus) => "ms-1".into(),
        ElectronLevel::Ground(Ms::Plus) => "ms+1".into(),
        other => format!("{other:?}"),
    }
}

struct Shot<'a> {
    setup: &'a Setup<'a>,
    state: RegisterState,
    last: HashMap<&'a str, u32>,
    reads: Vec<String>,
}

enum Flow {
    Continue,
    Reject(String),
}

impl<'a> Shot<'a> {
    fn exec<R: Rng + ?Sized>(&mut self, block: &'a [Located], rng: &mut R) -> Result<Flow> {
        let p = self.setup.protocol;
        let run_err = |line: usize, e: Error| Error::Run(format!("line {line}: {e}"));
        for s in block {
            match &s.statement {
                Statement::Pump { target, duration, power } => {
                    let drive = match target {
                        PumpKind::Ms0 => Drive::a1(power.unwrap_or(p.pump_a1_power)),
                        PumpKind::Pm1 => Drive::ex(power.unwrap_or(p.pump_ex_power)),
                    };
                    self.setup.laser(&mut self.state, &drive, *duration, rng);
                }
                Statement::Mw { carrier, rabi, duration } => {
                    let pulse = PulseParams::mw(*carrier, *rabi, duration.resolve(*rabi));
                    self.state = mw_pulse(&self.state, &pulse, self.setup.hyperfine, rng).map_err(|e| run_err(s.line, e))?;
                }
                Statement::Rf { carrier, rabi, duration, nucleus } => {
                    let pulse = PulseParams::rf(*nucleus, *carrier, *rabi, duration.resolve(*rabi));
                    self.state = rf_pulse(&self.state, &pulse, self.setup.hyperfine, rng).map_err(|e| run_err(s.line, e))?;
                }
                Statement::Read { duration, label, power, .. } => {
                    let c = self.setup.read(&mut self.state, *duration, power.unwrap_or(p.readout_power), rng);
                    self.last.insert(label.as_str(), c);
                    self.reads.push(format!("{label}={c}"));
                }
                Statement::Condition { label, predicate } => {
                    let c = *self
                        .last
                        .get(label.as_str())
                        .expect("validation guarantees the label was read");
                    if !predicate.holds(c) {
                        return Ok(Flow::Reject(format!("condition {label}: {c} counts")));
                    }
                }
                Statement::Repeat { n, body } => {
                    for _ in 0..*n {
                        if let Flow::Reject(r) = self.exec(body, rng)? {
                            return Ok(Flow::Reject(r));
                        }
                    }
                }
                Statement::CheckCharge { p_reject } => {
                    if !charge_resonance_check(&self.state, *p_reject, rng) {
                        return Ok(Flow::Reject("charge-resonance check".into()));
                    }
                }
            }
        }
        Ok(Flow::Continue)
    }
}

fn preflight(program: &ProtocolProgram, setup: &Setup, strict: bool) -> Result<()> {
    program.validate()?;
    fn nuclei(b: &[Located], out: &mut Vec<(usize, usize)>) {
        for s in b {
            match &s.statement {
                Statement::Rf { nucleus, .. } => out.push((s.line, *nucleus)),
                Statement::Repeat { body, .. } => nuclei(body, out),
                _ => {}
            }
        }
    }
    let mut rf = Vec::new();
    nuclei(&program.statements, &mut rf);
    let active = setup.hyperfine.active_nuclei.get();
    if let Some((line, n)) = rf.into_iter().find(|(_, n)| *n >= active) {
        return Err(Error::Run(format!("line {line}: RF on nucleus {n} but only {active} active")));
    }
    if strict {
        let lines = setup.hyperfine.lines();
        let tol = STRICT_LINEWIDTHS * setup.hyperfine.linewidth;
        for (line, c) in program.mw_carriers() {
            let nearest = lines.iter().map(|l| (l.frequency - c).abs()).fold(f64::INFINITY, f64::min);
            if nearest > tol {
                return Err(Error::Run(format!(
                    "line {line}: MW carrier {c} MHz is {nearest:.3} MHz from the nearest line (strict limit {tol:.3} MHz)"
                )));
            }
        }
    }
    Ok(())
}

/// Execute `n_shots` independent shots. Each shot starts with the electron
/// in `ms = 0` and uniformly drawn nuclei; shot `i` draws from its own
/// stream of `master_seed`, so the table does not depend on the thread
/// count.
pub fn run_program(program: &ProtocolProgram, setup: &Setup, n_shots: usize, master_seed: u64, opts: RunOptions) -> Result<ShotTable> {
    preflight(program, setup, opts.strict)?;
    let body = || {
        try_run_shots(n_shots, master_seed, LABEL, |i, rng: &mut ShotRng| {
            let mut shot = Shot { setup, state: unpolarized(setup, Ms::Zero, rng), last: HashMap::new(), reads: Vec::new() };
            let flow = shot.exec(&program.statements, rng)?;
            let (accepted, reason) = match flow {
                Flow::Continue => (true, String::new()),
                Flow::Reject(r) => (false, r),
            };
            Ok(ShotRecord {
                shot: i as usize,
                accepted,
                reason,
                electron: electron_text(&shot.state),
                nuclei: shot.state.nuclei.to_string(),
                reads: shot.reads.join(";"),
            })
        })
    };
    let records = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Run(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    Ok(ShotTable { name: program.name.clone(), seed: master_seed, labels: program.labels(), records })
}
