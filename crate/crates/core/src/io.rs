//! CSV emission. Floats carry 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::State;
use crate::scalar::Real;

/// `d.dddddddddddddddde±x`, 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `x,u` with one row per cell center.
pub fn snapshot_csv<T: Real>(s: &State<T>) -> String {
    let mut out = String::with_capacity(48 * (s.len() + 1));
    out.push_str("x,u\n");
    for (x, u) in s.grid().centers().zip(&s.u) {
        let _ = writeln!(out, "{},{}", fmt_float(x.to_f64_lossy()), fmt_float(u.to_f64_lossy()));
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_snapshot<T: Real>(path: &Path, s: &State<T>) -> Result<()> {
    write_file(path, &snapshot_csv(s))
}

/// Parses a snapshot CSV back into `(x, u)` columns.
pub fn parse_snapshot_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines();
    if lines.next() != Some("x,u") {
        return Err(Error::Input("snapshot CSV must start with `x,u`".into()));
    }
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for (row, line) in lines.enumerate() {
        let (x, u) = line
            .split_once(',')
            .ok_or_else(|| Error::Input(format!("row {row}: expected two columns")))?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Input(format!("row {row}: {e}")));
        xs.push(parse(x)?);
        us.push(parse(u)?);
    }
    Ok((xs, us))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use proptest::prelude::*;

    #[test]
    fn snapshot_layout() {
        let s = State::new(Grid::new(2).unwrap(), 0.0, vec![0.1, -0.1]).unwrap();
        let csv = snapshot_csv(&s);
        assert_eq!(
            csv,
            "x,u\n2.5000000000000000e-1,1.0000000000000001e-1\n7.5000000000000000e-1,-1.0000000000000001e-1\n"
        );
        assert!(!csv.contains('\r'));
    }

    proptest! {
        #[test]
        fn snapshot_values_round_trip(u in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let s = State::new(Grid::new(u.len()).unwrap(), 0.0, u.clone()).unwrap();
            let (xs, back) = parse_snapshot_csv(&snapshot_csv(&s)).unwrap();
            prop_assert_eq!(back, u);
            prop_assert_eq!(xs, s.grid().centers().collect::<Vec<f64>>());
        }
    }
}
