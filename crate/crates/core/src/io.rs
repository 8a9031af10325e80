//! CSV input and output.
//!
//! Covariates come either as one wide table `x,y,<name>...` with one row per
//! cell center, or as a directory with one `x,y,value` table per covariate
//! (named after the file stem). Rows may appear in any order but must cover
//! an equispaced rectangular grid completely. Point patterns are `x,y`
//! tables. Reals are written in shortest round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use crate::geometry::{CovariateField, Grid, PointPattern, Window};
use crate::simulate::LogLinearModel;
use crate::{Error, Result};

const GRID_TOL: f64 = 1e-6;

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: `{field}` is not a number ({what})")))
}

/// Sorted distinct values, merging those within a tolerance of the spacing.
fn axis(values: &mut Vec<f64>) -> Result<(f64, f64, usize)> {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + b.abs()));
    match values.len() {
        0 => Err(Error::Parse("no grid coordinates".into())),
        1 => Err(Error::Parse("grid needs at least two distinct coordinates per axis".into())),
        n => {
            let step = (values[n - 1] - values[0]) / (n - 1) as f64;
            for (i, v) in values.iter().enumerate() {
                if (values[0] + step * i as f64 - v).abs() > GRID_TOL * step {
                    return Err(Error::Parse("grid coordinates are not equispaced".into()));
                }
            }
            Ok((values[0], step, n))
        }
    }
}

fn grid_from_centers(xs: &[f64], ys: &[f64]) -> Result<Grid> {
    let (x0, dx, nx) = axis(&mut xs.to_vec())?;
    let (y0, dy, ny) = axis(&mut ys.to_vec())?;
    Grid::new(nx, ny, x0 - 0.5 * dx, y0 - 0.5 * dy, dx, dy)
}

fn cell_index(grid: &Grid, x: f64, y: f64) -> Result<usize> {
    let fx = (x - grid.x0) / grid.dx - 0.5;
    let fy = (y - grid.y0) / grid.dy - 0.5;
    let (ix, iy) = (fx.round(), fy.round());
    if (fx - ix).abs() > 1e-4 || (fy - iy).abs() > 1e-4 || ix < 0.0 || iy < 0.0 {
        return Err(Error::Parse(format!("({x}, {y}) is not a cell center")));
    }
    let (ix, iy) = (ix as usize, iy as usize);
    if ix >= grid.nx || iy >= grid.ny {
        return Err(Error::Parse(format!("({x}, {y}) is not a cell center")));
    }
    Ok(grid.index(ix, iy))
}

fn fill_rasters(
    grid: &Grid,
    rows: &[(f64, f64, Vec<f64>)],
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = grid.n_cells();
    if rows.len() != n {
        return Err(Error::Parse(format!(
            "{} rows for a {}x{} grid",
            rows.len(),
            grid.nx,
            grid.ny
        )));
    }
    let mut values = vec![vec![f64::NAN; n]; p];
    let mut seen = vec![false; n];
    for (x, y, v) in rows {
        let c = cell_index(grid, *x, *y)?;
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::Parse(format!("duplicate cell center ({x}, {y})")));
        }
        for (raster, val) in values.iter_mut().zip(v) {
            raster[c] = *val;
        }
    }
    Ok(values)
}

/// Reads a wide covariate table `x,y,<name>...`.
pub fn read_covariates_csv<R: Read>(input: R) -> Result<CovariateField> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "x" || &header[1] != "y" {
        return Err(Error::Parse("covariate table needs columns x,y,<name>...".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("line {line}: expected {} fields", header.len())));
        }
        let x = parse_f64(&rec[0], "x", line)?;
        let y = parse_f64(&rec[1], "y", line)?;
        let v = rec
            .iter()
            .skip(2)
            .zip(&names)
            .map(|(f, n)| parse_f64(f, n, line))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((x, y, v));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let grid = grid_from_centers(&xs, &ys)?;
    let values = fill_rasters(&grid, &rows, names.len())?;
    CovariateField::new(grid, values, names)
}

/// Reads every `*.csv` file of `dir` as one `x,y,value` covariate, in file
/// name order. All files must share the grid.
pub fn read_covariate_dir(dir: &Path) -> Result<CovariateField> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!("no .csv files in {}", dir.display())));
    }
    let mut grid: Option<Grid> = None;
    let mut values = Vec::new();
    let mut names = Vec::new();
    for path in files {
        let field = read_covariates_csv(std::fs::File::open(&path)?)?;
        if field.p() != 1 {
            return Err(Error::Parse(format!("{} must have exactly one value column", path.display())));
        }
        match &grid {
            None => grid = Some(*field.grid()),
            Some(g) if same_grid(g, field.grid()) => {}
            Some(_) => {
                return Err(Error::Parse(format!("{} uses a different grid", path.display())))
            }
        }
        names.push(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        values.push(field.raster(0).to_vec());
    }
    CovariateField::new(grid.expect("at least one file"), values, names)
}

fn same_grid(a: &Grid, b: &Grid) -> bool {
    a.nx == b.nx
        && a.ny == b.ny
        && (a.x0 - b.x0).abs() <= GRID_TOL * a.dx
        && (a.y0 - b.y0).abs() <= GRID_TOL * a.dy
        && (a.dx - b.dx).abs() <= GRID_TOL * a.dx
        && (a.dy - b.dy).abs() <= GRID_TOL * a.dy
}

/// Reads a covariate directory or a wide table depending on `path`.
pub fn read_covariates(path: &Path) -> Result<CovariateField> {
    if path.is_dir() {
        read_covariate_dir(path)
    } else {
        read_covariates_csv(std::fs::File::open(path)?)
    }
}

/// Writes the wide table, rows ordered by y then x.
pub fn write_covariates_csv<W: Write>(out: W, field: &CovariateField) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(field.names().iter().cloned());
    w.write_record(&header)?;
    let grid = field.grid();
    for c in 0..grid.n_cells() {
        let [x, y] = grid.cell_center(c);
        let mut rec = vec![x.to_string(), y.to_string()];
        rec.extend((0..field.p()).map(|k| field.raster(k)[c].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `x,y` table; every point must lie in `window`.
pub fn read_pattern_csv<R: Read>(input: R, window: Window) -> Result<PointPattern> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "x" || &header[1] != "y" {
        return Err(Error::Parse("pattern table needs columns x,y".into()));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        points.push([parse_f64(&rec[0], "x", line)?, parse_f64(&rec[1], "y", line)?]);
    }
    PointPattern::new(points, window)
}

pub fn write_pattern_csv<W: Write>(out: W, pattern: &PointPattern) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y"])?;
    for [x, y] in pattern.points() {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `lambda,log_omega,<name>...` rows, one per model.
pub fn write_coefficients_csv<W: Write>(
    out: W,
    names: &[String],
    rows: &[(f64, LogLinearModel)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lambda".to_string(), "log_omega".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (lambda, m) in rows {
        let mut rec = vec![lambda.to_string(), m.log_omega.to_string()];
        rec.extend(m.beta.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
