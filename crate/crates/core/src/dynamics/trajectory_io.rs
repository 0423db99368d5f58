//! Timestamp export.
//!
//! Text: one timestamp in µs per line, `#` lines ignored.
//! Binary: the 8-byte magic `NVPHOT01`, a little-endian `u64` count, then
//! `count` little-endian `f64` timestamps in seconds.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NVPHOT01";

pub fn write_text<W: Write>(mut w: W, times_us: &[f64]) -> Result<()> {
    for t in times_us {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        out.push(s.parse::<f64>().map_err(|e| Error::Parse {
            line: i + 1,
            column: 1,
            message: format!("bad timestamp {s:?}: {e}"),
        })?);
    }
    Ok(out)
}

pub fn write_binary<W: Write>(mut w: W, times_us: &[f64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(times_us.len() as u64).to_le_bytes())?;
    for t in times_us {
        w.write_all(&(t * 1e-6).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Validation("not a photon timestamp file (bad magic)".into()));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf) * 1e6);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let t = vec![0.0, 0.125, 3.5, 99.999];
        let mut txt = Vec::new();
        write_text(&mut txt, &t).unwrap();
        assert_eq!(read_text(&txt[..]).unwrap(), t);
        let mut bin = Vec::new();
        write_binary(&mut bin, &t).unwrap();
        assert_eq!(bin.len(), 16 + 8 * t.len());
        let back = read_binary(&bin[..]).unwrap();
        for (a, b) in back.iter().zip(&t) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(read_binary(&b"XXXXXXXX"[..]).is_err());
    }
}
