//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! that every value reads back bit-for-bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use mfmix::equilibrium::{FeedbackPolicy, MpFeedbackPolicy};
use mfmix::{Mat2, RiccatiSolutionMi, RiccatiSolutionMp, TimeGrid, Variant, Vec2};
use serde::Serialize;

use crate::error::CliError;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Writes a numeric table; `None` cells are left blank.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.map(fmt_f64).unwrap_or_default()))?;
    }
    w.flush()?;
    Ok(())
}

fn numeric(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<Option<f64>>> = rows.map(|r| r.into_iter().map(Some).collect()).collect();
    write_table(path, &header, &rows)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub const MI_SOLUTION_HEADER: [&str; 5] = ["t", "A", "B", "C", "Xbar"];
pub const MP_SOLUTION_HEADER: [&str; 13] = [
    "t", "A11", "A12", "A21", "A22", "B11", "B12", "B21", "B22", "C1", "C2", "Xbar_NC", "Xbar_C",
];

fn mat_entries(m: &Mat2) -> [f64; 4] {
    [m.0[0][0], m.0[0][1], m.0[1][0], m.0[1][1]]
}

pub fn write_solution_mi(path: &Path, sol: &RiccatiSolutionMi) -> Result<(), CliError> {
    let rows = (0..sol.grid.len()).map(|k| vec![sol.grid.time(k), sol.a[k], sol.b[k], sol.c[k], sol.xbar[k]]);
    numeric(path, &MI_SOLUTION_HEADER, rows)
}

pub fn write_solution_mp(path: &Path, sol: &RiccatiSolutionMp) -> Result<(), CliError> {
    let rows = (0..sol.grid.len()).map(|k| {
        let mut row = vec![sol.grid.time(k)];
        row.extend(mat_entries(&sol.a[k]));
        row.extend(mat_entries(&sol.b[k]));
        row.extend(sol.c[k].0);
        row.extend(sol.xbar[k].0);
        row
    });
    numeric(path, &MP_SOLUTION_HEADER, rows)
}

pub fn write_policy_mi(path: &Path, policy: &FeedbackPolicy) -> Result<(), CliError> {
    let rows = (0..policy.grid.len()).map(|k| {
        vec![policy.grid.time(k), policy.gain_self[k], policy.gain_mean[k], policy.intercept[k]]
    });
    numeric(path, &["t", "gain_self", "gain_mean", "intercept"], rows)
}

pub fn write_policy_mp(path: &Path, policy: &MpFeedbackPolicy) -> Result<(), CliError> {
    let header = [
        "t",
        "gain_self_NC",
        "gain_mean_NC_NC",
        "gain_mean_NC_C",
        "intercept_NC",
        "gain_self_C",
        "gain_mean_C_NC",
        "gain_mean_C_C",
        "intercept_C",
    ];
    let rows = (0..policy.grid.len()).map(|k| {
        let mut row = vec![policy.grid.time(k)];
        for g in 0..2 {
            let (gs, gm, ic) = policy.row(g, k);
            row.extend([gs, gm[0], gm[1], ic]);
        }
        row
    });
    numeric(path, &header, rows)
}

/// A solution read back from `solution.csv`.
#[derive(Debug, Clone, PartialEq)]
pub enum SolutionFile {
    Mi(RiccatiSolutionMi),
    Mp(RiccatiSolutionMp),
}

/// Reads `solution.csv`. The grid is rebuilt from the time column, which
/// must be uniform.
pub fn read_solution_csv(path: &Path, variant: Variant) -> Result<SolutionFile, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| CliError::io(format!("{}: bad number {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(CliError::io(format!("{}: need at least two rows", path.display())));
    }
    let horizon = rows[rows.len() - 1][0];
    let grid = TimeGrid::new(horizon, rows.len() - 1).map_err(|e| CliError::io(e.to_string()))?;
    let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    if header == MI_SOLUTION_HEADER {
        Ok(SolutionFile::Mi(RiccatiSolutionMi {
            grid,
            a: col(1),
            b: col(2),
            c: col(3),
            xbar: col(4),
            variant,
        }))
    } else if header == MP_SOLUTION_HEADER {
        let mat = |r: &Vec<f64>, j: usize| Mat2::new(r[j], r[j + 1], r[j + 2], r[j + 3]);
        Ok(SolutionFile::Mp(RiccatiSolutionMp {
            grid,
            a: rows.iter().map(|r| mat(r, 1)).collect(),
            b: rows.iter().map(|r| mat(r, 5)).collect(),
            c: rows.iter().map(|r| Vec2::new(r[9], r[10])).collect(),
            xbar: rows.iter().map(|r| Vec2::new(r[11], r[12])).collect(),
            variant,
        }))
    } else {
        Err(CliError::io(format!("{}: unrecognized header {header:?}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 2.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
    }
}
