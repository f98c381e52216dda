//! CSV ingestion and emission for densities (`x,rho`).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, GridSpec};
use crate::transport::fmt;

/// Relative tolerance on the spacing of the position column.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// Reads a two-column CSV with header `<position>,rho`. Rows are numbered
/// from 1 after the header in error messages.
pub(crate) fn read_columns<R: BufRead>(input: R, position: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != position || &headers[1] != "rho" {
        return Err(Error::InvalidInput(format!(
            "expected header `{position},rho`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let (mut xs, mut vs) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let row = row + 1;
        let rec = rec?;
        let parse = |j: usize, name: &str| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidInput(format!("row {row}: invalid {name} value `{s}`")))
        };
        let x = parse(0, position)?;
        let v = parse(1, "rho")?;
        if v < 0.0 {
            return Err(Error::InvalidInput(format!("row {row}: negative density {v}")));
        }
        xs.push(x);
        vs.push(v);
    }
    Ok((xs, vs))
}

/// Checks that consecutive positions are spaced by `dx` within
/// `SPACING_TOLERANCE` relative.
pub(crate) fn check_uniform(xs: &[f64], dx: f64) -> Result<()> {
    if !(dx > 0.0) {
        return Err(Error::InvalidInput("positions must be strictly increasing".into()));
    }
    for (i, w) in xs.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if ((gap - dx) / dx).abs() > SPACING_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "row {}: spacing {gap} differs from the uniform spacing {dx}",
                i + 2
            )));
        }
    }
    Ok(())
}

/// Reads `x,rho` rows at the cell centres of a uniform grid; the grid is
/// inferred from the first and last centre.
pub fn read_density<R: BufRead>(input: R) -> Result<GridDensity> {
    let (xs, values) = read_columns(input, "x")?;
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidInput("density CSV needs at least two rows".into()));
    }
    let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    check_uniform(&xs, dx)?;
    let grid = GridSpec::new(xs[0] - 0.5 * dx, xs[n - 1] + 0.5 * dx, n)?;
    GridDensity::new(grid, values)
}

pub fn read_density_file(path: &Path) -> Result<GridDensity> {
    read_density(BufReader::new(File::open(path)?))
}

/// Writes `x,rho`.
pub fn write_density<W: Write>(rho: &GridDensity, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "rho"])?;
    for (x, v) in rho.grid().centers().iter().zip(rho.values()) {
        w.write_record([fmt(*x), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}
