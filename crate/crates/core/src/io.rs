//! CSV input and output.
//!
//! Curves: a header row holding the grid points, then one row per curve.
//! Responses: a `y` column and an optional `weight` column.
//! Floats are written in shortest round-trip form, so re-reading is bit-exact.

use crate::eigensys::EigenSystem;
use crate::error::{invalid, Error, Result};
use crate::funcspace::{CurveDataset, Grid, GridFunction};
use nalgebra::DMatrix;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => invalid(format!("{other:?}")),
        }
    } else {
        invalid(format!("malformed csv: {e}"))
    }
}

fn parse(field: &str, line: u64, col: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        invalid(format!(
            "line {line}, column {}: cannot parse '{field}'",
            col + 1
        ))
    })
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_curves_from(reader: impl Read) -> Result<(Grid, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let points = header
        .iter()
        .enumerate()
        .map(|(c, f)| parse(f, 1, c))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::from_points(&points)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != grid.len() {
            return Err(invalid(format!(
                "line {line}: {} values but the grid has {} points",
                rec.len(),
                grid.len()
            )));
        }
        for (c, f) in rec.iter().enumerate() {
            values.push(parse(f, line, c)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((grid, DMatrix::from_row_slice(rows, grid.len(), &values)))
}

pub fn read_curves(path: &Path) -> Result<(Grid, DMatrix<f64>)> {
    read_curves_from(File::open(path)?)
}

pub fn write_curves_to(mut w: impl Write, grid: Grid, x: &DMatrix<f64>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(&mut w);
    wtr.write_record(grid.points().into_iter().map(fmt))
        .map_err(csv_err)?;
    for row in x.row_iter() {
        wtr.write_record(row.iter().map(|v| fmt(*v)))
            .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_curves(path: &Path, grid: Grid, x: &DMatrix<f64>) -> Result<()> {
    write_curves_to(File::create(path)?, grid, x)
}

pub fn read_responses_from(reader: impl Read) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let yc = find("y").ok_or_else(|| invalid("responses file needs a 'y' column"))?;
    let wc = find("weight");
    let (mut y, mut w) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |c: usize| {
            rec.get(c)
                .ok_or_else(|| invalid(format!("line {line}: missing column {}", c + 1)))
                .and_then(|f| parse(f, line, c))
        };
        y.push(get(yc)?);
        if let Some(c) = wc {
            w.push(get(c)?);
        }
    }
    Ok((y, wc.map(|_| w)))
}

pub fn read_responses(path: &Path) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    read_responses_from(File::open(path)?)
}

pub fn write_responses_to(mut w: impl Write, y: &[f64], weights: Option<&[f64]>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(&mut w);
    match weights {
        Some(ws) => {
            wtr.write_record(["y", "weight"]).map_err(csv_err)?;
            for (y, w) in y.iter().zip(ws) {
                wtr.write_record([fmt(*y), fmt(*w)]).map_err(csv_err)?;
            }
        }
        None => {
            wtr.write_record(["y"]).map_err(csv_err)?;
            for y in y {
                wtr.write_record([fmt(*y)]).map_err(csv_err)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_responses(path: &Path, y: &[f64], weights: Option<&[f64]>) -> Result<()> {
    write_responses_to(File::create(path)?, y, weights)
}

pub fn read_dataset(curves: &Path, responses: &Path) -> Result<CurveDataset> {
    let (grid, x) = read_curves(curves)?;
    let (y, w) = read_responses(responses)?;
    CurveDataset::new(grid, x, y, w)
}

pub fn write_dataset(data: &CurveDataset, curves: &Path, responses: &Path) -> Result<()> {
    write_curves(curves, data.grid(), data.curves())?;
    write_responses(responses, data.responses(), data.weights())
}

/// Two columns `t,value`.
pub fn write_function_to(mut w: impl Write, f: &GridFunction) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(&mut w);
    wtr.write_record(["t", "value"]).map_err(csv_err)?;
    for (t, v) in f.grid().points().into_iter().zip(f.values()) {
        wtr.write_record([fmt(t), fmt(*v)]).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Column `t` followed by `phi_1 … phi_N`.
pub fn write_eigenfunctions_to(mut w: impl Write, es: &EigenSystem) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(&mut w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=es.len()).map(|nu| format!("phi_{nu}")));
    wtr.write_record(&header).map_err(csv_err)?;
    let phi = es.phi_matrix();
    for (i, t) in es.grid().points().into_iter().enumerate() {
        let mut rec = vec![fmt(t)];
        rec.extend(phi.row(i).iter().map(|v| fmt(*v)));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip_bit_exact() {
        let g = Grid::uniform(7).unwrap();
        let x = DMatrix::from_fn(3, 7, |i, j| {
            ((i * 7 + j) as f64 * 0.37).sin() / 3.0 + 1e-17 * j as f64
        });
        let mut buf = Vec::new();
        write_curves_to(&mut buf, g, &x).unwrap();
        let (g2, x2) = read_curves_from(buf.as_slice()).unwrap();
        assert_eq!(g, g2);
        for (a, b) in x.iter().zip(x2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn responses_round_trip() {
        let y = vec![0.1, -2.5e-300, 1.0 / 3.0];
        let w = vec![1.0, 0.25, 7.0];
        let mut buf = Vec::new();
        write_responses_to(&mut buf, &y, Some(&w)).unwrap();
        let (y2, w2) = read_responses_from(buf.as_slice()).unwrap();
        assert_eq!(y, y2);
        assert_eq!(Some(w), w2);
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_curves_from("0,0.5,1\n1,2\n".as_bytes()).is_err());
        assert!(read_curves_from("0,0.5,1\n1,x,2\n".as_bytes()).is_err());
        assert!(matches!(
            read_curves_from("0,0.5,1\n".as_bytes()),
            Err(Error::EmptyDataset)
        ));
        assert!(read_responses_from("z\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn eigenfunction_columns() {
        let g = Grid::uniform(51).unwrap();
        let es = crate::eigensys::solve_bvp_analytic(2, 8, g).unwrap();
        let mut buf = Vec::new();
        write_eigenfunctions_to(&mut buf, &es).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first.split(',').count(), es.len() + 1);
        assert_eq!(text.lines().count(), 52);
    }
}
