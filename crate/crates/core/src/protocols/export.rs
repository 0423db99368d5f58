//! CSV shot tables and JSON summaries.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::experiments::{ConditionedRabi, TwoQubitTable};
use super::oracle::{two_qubit_pixel, Oracle, TwoQubitPlan};
use crate::error::Result;

/// One CSV row per record, header from the field names.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Like [`write_csv`], but an empty table still gets `header`.
pub fn write_csv_with_header<W: Write, T: Serialize>(writer: W, header: &[&str], rows: &[T]) -> Result<()> {
    if !rows.is_empty() {
        return write_csv(writer, rows);
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

pub fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RabiRow {
    pub shot: usize,
    pub duration_index: usize,
    pub mw_duration: f64,
    pub r1_counts: u32,
    pub r2_counts: u32,
}

pub fn rabi_rows(r: &ConditionedRabi) -> Vec<RabiRow> {
    let mut rows = Vec::new();
    for (d, shots) in r.shots.iter().enumerate() {
        for (i, s) in shots.iter().enumerate() {
            rows.push(RabiRow {
                shot: d * shots.len() + i,
                duration_index: d,
                mw_duration: r.durations[d],
                r1_counts: s.r1_counts,
                r2_counts: s.r2_counts,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoQubitRow {
    pub shot: usize,
    pub rf_index: usize,
    pub mw_index: usize,
    pub rf_duration: f64,
    pub mw_duration: f64,
    pub accepted: bool,
    pub attempts: u32,
    pub electron_counts: u32,
    pub nuclear_counts: u32,
    pub electron: &'static str,
    pub nucleus: &'static str,
}

pub fn two_qubit_rows(t: &TwoQubitTable) -> Vec<TwoQubitRow> {
    t.shots
        .iter()
        .enumerate()
        .map(|(i, s)| TwoQubitRow {
            shot: i,
            rf_index: s.rf_index,
            mw_index: s.mw_index,
            rf_duration: t.rf_durations[s.rf_index],
            mw_duration: t.mw_durations[s.mw_index],
            accepted: s.heralded,
            attempts: s.attempts,
            electron_counts: s.electron_counts,
            nuclear_counts: s.nuclear_counts,
            electron: s.electron.as_str(),
            nucleus: if !s.heralded {
                "rejected"
            } else if s.nucleus_target {
                "target"
            } else {
                "other"
            },
        })
        .collect()
}

/// Per-pixel summary of the two-qubit experiment with the exact
/// conditional probabilities alongside.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PixelRow {
    pub rf_duration: f64,
    pub mw_duration: f64,
    pub heralded: usize,
    pub e0_target: usize,
    pub e0_other: usize,
    pub e1_target: usize,
    pub e1_other: usize,
    /// `P(nucleus in target | electron ms = 0)`.
    pub p_target_e0: f64,
    pub p_target_e1: f64,
    pub exact_p_target_e0: f64,
    pub exact_p_target_e1: f64,
}

pub fn pixel_rows(t: &TwoQubitTable, oracle: &Oracle, plan: &TwoQubitPlan) -> Result<Vec<PixelRow>> {
    let mut rows = Vec::new();
    for (ri, &rf) in t.rf_durations.iter().enumerate() {
        for (mi, &mw) in t.mw_durations.iter().enumerate() {
            let j = t.joint_counts(ri, mi);
            let x = two_qubit_pixel(oracle, plan, rf, mw)?;
            let ratio = |a: f64, b: f64| if a + b > 0.0 { a / (a + b) } else { f64::NAN };
            rows.push(PixelRow {
                rf_duration: rf,
                mw_duration: mw,
                heralded: j.iter().flatten().sum(),
                e0_target: j[0][0],
                e0_other: j[0][1],
                e1_target: j[1][0],
                e1_other: j[1][1],
                p_target_e0: ratio(j[0][0] as f64, j[0][1] as f64),
                p_target_e1: ratio(j[1][0] as f64, j[1][1] as f64),
                exact_p_target_e0: ratio(x[0][0], x[0][1]),
                exact_p_target_e1: ratio(x[1][0], x[1][1]),
            });
        }
    }
    Ok(rows)
}

/// Plot-ready `(x, y, y_err)` row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct XyRow {
    pub x: f64,
    pub y: f64,
    pub y_err: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_keeps_header() {
        let mut buf = Vec::new();
        write_csv_with_header::<_, RabiRow>(&mut buf, &["shot", "r1_counts"], &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "shot,r1_counts\n");
    }
}
