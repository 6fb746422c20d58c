//! CSV tables for sweeps, single-setting runs and triple tables.
//!
//! Every table starts with a `#` comment line naming the table and its schema
//! version, followed by a column header row. Floats print in shortest
//! round-trip form.

use std::io::{self, Write};

use crate::dataset::SCHEMA_VERSION;
use crate::experiments::{SettingPair, SweepPoint};
use crate::stats::{ExpectationEstimate, TripleTable};

pub const SWEEP_COLUMNS: &str = "theta_radians,expectation,std_error,n";
pub const RUN_COLUMNS: &str =
    "left_b2,left_b3,right_b2,right_b3,expectation,std_error,n,analytic";
pub const TRIPLE_COLUMNS: &str = "table,s1,s2,s3,count,fraction,std_error";

fn preamble<W: Write>(w: &mut W, table: &str, columns: &str) -> io::Result<()> {
    writeln!(w, "# eqrc {table} schema_version={SCHEMA_VERSION}")?;
    writeln!(w, "{columns}")
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[SweepPoint]) -> io::Result<()> {
    preamble(&mut w, "sweep", SWEEP_COLUMNS)?;
    for p in points {
        let e = &p.estimate;
        writeln!(w, "{},{},{},{}", p.theta_radians, e.value, e.std_error, e.n_samples)?;
    }
    w.flush()
}

pub fn write_run_csv<W: Write>(
    mut w: W,
    rows: &[(SettingPair, ExpectationEstimate)],
) -> io::Result<()> {
    preamble(&mut w, "run", RUN_COLUMNS)?;
    for (p, e) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.left.b2(),
            p.left.b3(),
            p.right.b2(),
            p.right.b3(),
            e.value,
            e.std_error,
            e.n_samples,
            crate::inequalities::analytic_expectation(&p.left, &p.right) + 0.0,
        )?;
    }
    w.flush()
}

pub fn write_triples_csv<W: Write>(mut w: W, tables: &[TripleTable]) -> io::Result<()> {
    preamble(&mut w, "triples", TRIPLE_COLUMNS)?;
    for t in tables {
        for (s, count) in t.cells() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t.kind,
                s[0].value(),
                s[1].value(),
                s[2].value(),
                count,
                t.fraction(s),
                t.fraction_std_error(s)
            )?;
        }
    }
    w.flush()
}

/// Data rows of a table written by this module, split into fields. Comment
/// and header lines are skipped.
pub fn read_csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Setting;

    #[test]
    fn sweep_csv_shape() {
        let p = SweepPoint {
            theta_radians: 0.5,
            estimate: ExpectationEstimate::from_sum(-3, 4).unwrap(),
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[p]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# eqrc sweep schema_version=1");
        assert_eq!(lines[1], SWEEP_COLUMNS);
        let rows = read_csv_rows(&text);
        assert_eq!(rows[0][0], "0.5");
        assert_eq!(rows[0][1], "-0.75");
        assert_eq!(rows[0][3], "4");
    }

    #[test]
    fn run_csv_has_analytic_column() {
        let pair = SettingPair::new(Setting::CANONICAL, Setting::new(0.5, 0.75f64.sqrt()).unwrap());
        let mut buf = Vec::new();
        write_run_csv(&mut buf, &[(pair, ExpectationEstimate::from_sum(-1, 2).unwrap())]).unwrap();
        let rows = read_csv_rows(&String::from_utf8(buf).unwrap());
        assert_eq!(rows[0].len(), RUN_COLUMNS.split(',').count());
        assert_eq!(rows[0][7], "-0.5");
    }
}
