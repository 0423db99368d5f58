use super::{Duration, Located, Predicate, ProtocolProgram, PumpKind, Statement};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    /// 1-based character column.
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let code = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, ch)) in code.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((byte, col + 1)),
            (true, Some((b, c))) => {
                out.push(Token { text: &code[b..byte], column: c });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((b, c)) = start {
        out.push(Token { text: &code[b..], column: c });
    }
    out
}

fn err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, column, message: message.into() }
}

#[derive(Clone, Copy)]
enum Quantity {
    Time,
    Frequency,
    Power,
}

impl Quantity {
    fn name(self) -> &'static str {
        match self {
            Quantity::Time => "duration",
            Quantity::Frequency => "frequency",
            Quantity::Power => "power",
        }
    }

    /// Factor to µs, MHz or nW.
    fn factor(self, unit: &str) -> Option<f64> {
        let u = unit.to_lowercase();
        match self {
            Quantity::Time => match u.as_str() {
                "ns" => Some(1e-3),
                "us" | "µs" | "μs" => Some(1.0),
                "ms" => Some(1e3),
                _ => None,
            },
            Quantity::Frequency => match u.as_str() {
                "hz" => Some(1e-6),
                "khz" => Some(1e-3),
                "mhz" => Some(1.0),
                "ghz" => Some(1e3),
                _ => None,
            },
            Quantity::Power => match u.as_str() {
                "pw" => Some(1e-3),
                "nw" => Some(1.0),
                "uw" | "µw" | "μw" => Some(1e3),
                _ => None,
            },
        }
    }

    fn units(self) -> &'static str {
        match self {
            Quantity::Time => "ns, us, ms",
            Quantity::Frequency => "Hz, kHz, MHz, GHz",
            Quantity::Power => "pW, nW, uW",
        }
    }
}

/// Length of the leading decimal literal of `s`.
fn number_prefix(s: &str) -> usize {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i == digits_start || (i == digits_start + 1 && b[digits_start] == b'.') {
        return 0;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    i
}

struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
    end_column: usize,
}

impl<'a> Line<'a> {
    fn arg(&self, i: usize, what: &str) -> Result<Token<'a>> {
        self.tokens
            .get(i)
            .copied()
            .ok_or_else(|| err(self.number, self.end_column, format!("missing {what}")))
    }

    fn quantity(&self, i: usize, q: Quantity) -> Result<f64> {
        let t = self.arg(i, q.name())?;
        let n = number_prefix(t.text);
        if n == 0 {
            return Err(err(self.number, t.column, format!("expected a {} with unit, got {:?}", q.name(), t.text)));
        }
        let value: f64 = t.text[..n]
            .parse()
            .map_err(|_| err(self.number, t.column, format!("malformed number {:?}", &t.text[..n])))?;
        let unit = &t.text[n..];
        let f = q.factor(unit).ok_or_else(|| {
            let col = t.column + t.text[..n].chars().count();
            if unit.is_empty() {
                err(self.number, col, format!("missing unit on {} (expected {})", q.name(), q.units()))
            } else {
                err(self.number, col, format!("malformed unit {unit:?} for {} (expected {})", q.name(), q.units()))
            }
        })?;
        Ok(value * f)
    }

    fn pulse_duration(&self, i: usize) -> Result<Duration> {
        let t = self.arg(i, "duration")?;
        if t.text.eq_ignore_ascii_case("pi") || t.text == "π" {
            Ok(Duration::Pi)
        } else {
            Ok(Duration::Micros(self.quantity(i, Quantity::Time)?))
        }
    }

    fn integer<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<T> {
        let t = self.arg(i, what)?;
        t.text
            .parse()
            .map_err(|_| err(self.number, t.column, format!("expected {what}, got {:?}", t.text)))
    }

    fn no_more(&self, n: usize) -> Result<()> {
        match self.tokens.get(n) {
            Some(t) => Err(err(self.number, t.column, format!("unexpected token {:?}", t.text))),
            None => Ok(()),
        }
    }

    /// `>=k`, `≥k`, optionally after a `counts` prefix.
    fn predicate(&self, i: usize, allow_below: bool) -> Result<Predicate> {
        let t = self.arg(i, "threshold")?;
        let s = t.text;
        let s = if s.len() >= 6 && s[..6].eq_ignore_ascii_case("counts") { &s[6..] } else { s };
        let (ctor, rest): (fn(u32) -> Predicate, &str) = if let Some(r) = s.strip_prefix(">=") {
            (Predicate::AtLeast, r)
        } else if let Some(r) = s.strip_prefix('≥') {
            (Predicate::AtLeast, r)
        } else if let Some(r) = s.strip_prefix('<').filter(|_| allow_below) {
            (Predicate::Below, r)
        } else {
            let expect = if allow_below { "counts>=k or counts<k" } else { ">=k" };
            return Err(err(self.number, t.column, format!("expected {expect}, got {:?}", t.text)));
        };
        let k = rest
            .parse()
            .map_err(|_| err(self.number, t.column, format!("malformed count in {:?}", t.text)))?;
        Ok(ctor(k))
    }
}

fn standalone(text: &str, q: Quantity) -> Result<f64> {
    let line = Line { number: 1, tokens: vec![Token { text, column: 1 }], end_column: text.chars().count() + 1 };
    line.quantity(0, q)
}

/// A duration such as `400ns` or `100us`, in µs.
pub fn parse_duration(text: &str) -> Result<f64> {
    standalone(text, Quantity::Time)
}

/// A frequency such as `2.874GHz`, in MHz.
pub fn parse_frequency(text: &str) -> Result<f64> {
    standalone(text, Quantity::Frequency)
}

/// A power such as `4.8nW`, in nW.
pub fn parse_power(text: &str) -> Result<f64> {
    standalone(text, Quantity::Power)
}

fn label_ok(s: &str) -> bool {
    let mut c = s.chars();
    c.next().is_some_and(|f| f.is_alphabetic() || f == '_') && s.chars().all(|ch| ch.is_alphanumeric() || ch == '_' || ch == '-')
}

/// Parse and validate a program. Errors carry line and column.
pub fn parse_program(source: &str) -> Result<ProtocolProgram> {
    let mut program = ProtocolProgram::default();
    // open REPEAT blocks: (line, column, n, body)
    let mut stack: Vec<(usize, usize, u32, Vec<Located>)> = Vec::new();
    let mut root: Vec<Located> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let number = idx + 1;
        let tokens = tokenize(raw);
        let Some(head) = tokens.first().copied() else { continue };
        let line = Line { number, end_column: raw.split('#').next().unwrap_or("").chars().count() + 1, tokens };
        let kw = head.text.to_ascii_uppercase();
        let statement = match kw.as_str() {
            "NAME" => {
                let t = line.arg(1, "program name")?;
                line.no_more(2)?;
                program.name = Some(t.text.to_string());
                None
            }
            "SEED" => {
                program.seed = Some(line.integer(1, "a non-negative integer seed")?);
                line.no_more(2)?;
                None
            }
            "SHOTS" => {
                program.n_shots = Some(line.integer(1, "a non-negative shot count")?);
                line.no_more(2)?;
                None
            }
            "PUMP" => {
                let t = line.arg(1, "pump target")?;
                let target = match t.text.to_ascii_lowercase().as_str() {
                    "ms0" => PumpKind::Ms0,
                    "pm1" | "ms±1" | "ms+-1" => PumpKind::Pm1,
                    _ => return Err(err(number, t.column, format!("pump target must be ms0 or pm1, got {:?}", t.text))),
                };
                let duration = line.quantity(2, Quantity::Time)?;
                let power = (line.tokens.len() > 3).then(|| line.quantity(3, Quantity::Power)).transpose()?;
                line.no_more(4)?;
                Some(Statement::Pump { target, duration, power })
            }
            "MW" => {
                let carrier = line.quantity(1, Quantity::Frequency)?;
                let rabi = line.quantity(2, Quantity::Frequency)?;
                let duration = line.pulse_duration(3)?;
                line.no_more(4)?;
                Some(Statement::Mw { carrier, rabi, duration })
            }
            "RF" => {
                let carrier = line.quantity(1, Quantity::Frequency)?;
                let rabi = line.quantity(2, Quantity::Frequency)?;
                let duration = line.pulse_duration(3)?;
                let nucleus = match line.tokens.get(4) {
                    None => 0,
                    Some(t) => match t.text.to_ascii_lowercase().as_str() {
                        "n14" => 0,
                        "c1" => 1,
                        "c2" => 2,
                        _ => return Err(err(number, t.column, format!("nucleus must be n14, c1 or c2, got {:?}", t.text))),
                    },
                };
                line.no_more(5)?;
                Some(Statement::Rf { carrier, rabi, duration, nucleus })
            }
            "READ" => {
                let duration = line.quantity(1, Quantity::Time)?;
                let threshold = match line.predicate(2, false)? {
                    Predicate::AtLeast(k) => k,
                    Predicate::Below(_) => unreachable!("below not allowed here"),
                };
                let l = line.arg(3, "READ label")?;
                if !label_ok(l.text) {
                    return Err(err(number, l.column, format!("invalid label {:?}", l.text)));
                }
                let power = (line.tokens.len() > 4).then(|| line.quantity(4, Quantity::Power)).transpose()?;
                line.no_more(5)?;
                if !labels.iter().any(|x| x == l.text) {
                    labels.push(l.text.to_string());
                }
                Some(Statement::Read { duration, threshold, label: l.text.to_string(), power })
            }
            "CONDITION" => {
                let l = line.arg(1, "READ label")?;
                if !labels.iter().any(|x| x == l.text) {
                    return Err(err(number, l.column, format!("undefined READ label {:?}", l.text)));
                }
                let predicate = line.predicate(2, true)?;
                line.no_more(3)?;
                Some(Statement::Condition { label: l.text.to_string(), predicate })
            }
            "CHECK_CHARGE" => {
                let t = line.arg(1, "rejection probability")?;
                let p: f64 = t
                    .text
                    .parse()
                    .map_err(|_| err(number, t.column, format!("expected a probability, got {:?}", t.text)))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err(number, t.column, format!("rejection probability {p} outside [0, 1]")));
                }
                line.no_more(2)?;
                Some(Statement::CheckCharge { p_reject: p })
            }
            "REPEAT" => {
                let n = line.integer(1, "a repetition count")?;
                line.no_more(2)?;
                if stack.len() >= super::MAX_REPEAT_DEPTH {
                    return Err(err(number, head.column, format!("REPEAT nesting deeper than {}", super::MAX_REPEAT_DEPTH)));
                }
                stack.push((number, head.column, n, Vec::new()));
                None
            }
            "END" => {
                line.no_more(1)?;
                let (start, _, n, body) = stack.pop().ok_or_else(|| err(number, head.column, "END without REPEAT"))?;
                let s = Located { line: start, statement: Statement::Repeat { n, body } };
                match stack.last_mut() {
                    Some(b) => b.3.push(s),
                    None => root.push(s),
                }
                None
            }
            _ => return Err(err(number, head.column, format!("unknown keyword {:?}", head.text))),
        };
        if let Some(statement) = statement {
            let s = Located { line: number, statement };
            match stack.last_mut() {
                Some(b) => b.3.push(s),
                None => root.push(s),
            }
        }
    }
    if let Some((line, column, _, _)) = stack.last() {
        return Err(err(*line, *column, "unclosed REPEAT block"));
    }
    program.statements = root;
    program.validate()?;
    Ok(program)
}
