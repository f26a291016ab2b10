use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

pub const TWOQUBIT_COLUMNS: [&str; 6] = [
    "t",
    "mean_Tm1",
    "mean_T0",
    "mean_T1",
    "mean_concurrence",
    "std_concurrence",
];
pub const OSCILLATOR_COLUMNS: [&str; 7] = [
    "t",
    "mean_X",
    "mean_P",
    "std_X",
    "std_P",
    "single_traj_X",
    "single_traj_P",
];

/// Nine significant digits, shortest form that keeps them.
pub fn sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.8e}");
    let rounded: f64 = s.parse().expect("formatted float parses");
    let mag = rounded.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        let plain = format!("{rounded:.decimals$}");
        if plain.contains('.') {
            plain
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            plain
        }
    } else {
        s
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_series(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(|&x| sig9(x)).collect())
        .collect();
    write_table(path, header, &text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.1234567891234), "0.123456789");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(400.0), "400");
        assert_eq!(sig9(-2.5e-7), "-2.50000000e-7");
        assert_eq!(sig9(12345678912.0), "1.23456789e10");
        assert_eq!(sig9(0.0), "0");
    }

    #[test]
    fn sig9_round_trips_to_nine_digits() {
        for x in [
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02214076e23,
            -0.000123456789012,
            98765.4321987,
        ] {
            let y: f64 = sig9(x).parse().unwrap();
            assert!(((y - x) / x).abs() < 5e-9, "{x} -> {}", sig9(x));
        }
    }
}
