//! CSV helpers shared by the exporters.
//!
//! Numbers are written with 9 significant digits in a locale-independent
//! `%.9g`-style format.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// `%.9g` formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `1e-4 <= |x| < 1e9`.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header `x_0,...,x_{d-1}`.
pub fn coordinate_header(dim: usize) -> String {
    (0..dim).map(|k| format!("x_{k}")).collect::<Vec<_>>().join(",")
}

/// Points as CSV with a coordinate header line.
pub fn write_points_csv<W: Write>(points: ArrayView2<'_, f64>, dim: usize, mut out: W) -> Result<()> {
    writeln!(out, "{}", coordinate_header(dim))?;
    for row in points.rows() {
        let line = row.iter().map(|v| format_sig9(*v)).collect::<Vec<_>>().join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Headerless numeric CSV, one point per row. Blank lines are skipped;
/// errors name the 1-based line.
pub fn read_points_csv<R: BufRead>(input: R) -> Result<SampleBatch> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|field| {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line: k + 1,
                    message: format!("not a number: {:?}", field.trim()),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        line: k + 1,
                        message: "non-finite value".into(),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    SampleBatch::new(Array2::from_shape_vec((rows.len(), d), flat).expect("rectangular rows"))
}
