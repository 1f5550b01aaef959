//! CSV time series of [`DiagRecord`]s.
//!
//! Columns follow [`DiagRecord::COLUMNS`]. Reals are written in scientific
//! notation with 17 significant digits, which round-trips every `f64`;
//! iteration counts are written as integers.

use std::path::Path;

use seaice_core::DiagRecord;

use crate::snapshot::atomic_write;

const INTEGER_COLUMNS: [&str; 2] = ["picard_iterations", "cg_iterations"];

pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn to_csv(series: &[DiagRecord]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DiagRecord::COLUMNS)?;
    for r in series {
        let row: Vec<String> = DiagRecord::COLUMNS.iter().zip(r.values()).map(|(c, v)| if INTEGER_COLUMNS.contains(c) { format!("{}", v as u64) } else { format_real(v) }).collect();
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}

pub fn write_diagnostics(series: &[DiagRecord], path: &Path) -> anyhow::Result<()> {
    atomic_write(path, &to_csv(series)?)?;
    Ok(())
}

/// Parses a file written by [`write_diagnostics`].
pub fn read_diagnostics(path: &Path) -> anyhow::Result<Vec<DiagRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    anyhow::ensure!(header == DiagRecord::COLUMNS, "unexpected diagnostics header {header:?}");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec.iter().map(|s| s.parse::<f64>()).collect::<Result<_, _>>()?;
        anyhow::ensure!(v.len() == DiagRecord::COLUMNS.len(), "row has {} columns", v.len());
        out.push(DiagRecord {
            t: v[0],
            h_min: v[1],
            h_max: v[2],
            a_min: v[3],
            a_max: v[4],
            mass: v[5],
            u_h3: v[6],
            h_h3: v[7],
            a_h3: v[8],
            energy: v[9],
            frak_energy: v[10],
            picard_ratio: v[11],
            picard_iterations: v[12] as usize,
            cg_iterations: v[13] as usize,
            cg_residual: v[14],
            div_growth: v[15],
        });
    }
    Ok(out)
}
