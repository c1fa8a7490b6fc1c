//! Field persistence.
//!
//! CSV: a header row, then `x,value` (1D) or `x,y,value` (2D) rows, `.` as
//! decimal separator and LF line endings. The grid is recovered from the
//! coordinates; the boundary condition is not stored and must be supplied.
//!
//! Binary: little-endian header `d: u32, n: u32, L: f64, dx: f64` followed by
//! the `n^d` cell values as `f64`.

use std::io::{self, BufRead, BufReader, Read, Write};

use super::{Boundary, Field, GridError, GridSpec};

#[derive(Debug, thiserror::Error)]
pub enum FieldIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_csv<W: Write>(field: &Field, mut w: W) -> io::Result<()> {
    let g = field.grid();
    let n = g.cells();
    match g.dim() {
        1 => {
            writeln!(w, "x,value")?;
            for (i, v) in field.values().iter().enumerate() {
                writeln!(w, "{:e},{:e}", g.center(i), v)?;
            }
        }
        _ => {
            writeln!(w, "x,y,value")?;
            for (k, v) in field.values().iter().enumerate() {
                writeln!(w, "{:e},{:e},{:e}", g.center(k % n), g.center(k / n), v)?;
            }
        }
    }
    w.flush()
}

pub fn to_csv_string(field: &Field) -> String {
    let mut buf = Vec::new();
    write_csv(field, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv output is ascii")
}

pub fn read_csv<R: Read>(r: R, boundary: Boundary) -> Result<Field, FieldIoError> {
    let reader = BufReader::new(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            let cols = line.split(',').count();
            if cols != 2 && cols != 3 {
                return Err(FieldIoError::Parse {
                    line: 1,
                    msg: format!("expected 2 or 3 columns in header, got {cols}"),
                });
            }
            width = Some(cols);
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FieldIoError::Parse { line: lineno + 1, msg: e.to_string() })?;
        if Some(row.len()) != width {
            return Err(FieldIoError::Parse {
                line: lineno + 1,
                msg: format!("expected {} columns, got {}", width.unwrap_or(0), row.len()),
            });
        }
        rows.push(row);
    }
    let width = width.ok_or(FieldIoError::Parse { line: 1, msg: "empty file".into() })?;
    let dim = width - 1;
    let count = rows.len();
    let n = match dim {
        1 => count,
        _ => {
            let n = (count as f64).sqrt().round() as usize;
            if n * n != count {
                return Err(FieldIoError::Parse {
                    line: count + 1,
                    msg: format!("{count} rows is not a square grid"),
                });
            }
            n
        }
    };
    if n < 2 {
        return Err(FieldIoError::Parse { line: 2, msg: "need at least two cells".into() });
    }
    let dx = rows[1][0] - rows[0][0];
    let half_width = -(rows[0][0] - 0.5 * dx);
    let grid = GridSpec::new(dim, half_width, n, boundary)?;
    // check the coordinates are the cell centers of that grid
    for (k, row) in rows.iter().enumerate() {
        let c = grid.cell_center(k);
        for a in 0..dim {
            if (row[a] - c[a]).abs() > 1e-6 * dx.max(1e-300) {
                return Err(FieldIoError::Parse {
                    line: k + 2,
                    msg: format!("coordinate {} does not lie on a uniform grid", row[a]),
                });
            }
        }
    }
    let values = rows.into_iter().map(|r| r[dim]).collect();
    Ok(Field::from_values(grid, values)?)
}

pub fn write_binary<W: Write>(field: &Field, mut w: W) -> io::Result<()> {
    let g = field.grid();
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&(g.cells() as u32).to_le_bytes())?;
    w.write_all(&g.half_width().to_le_bytes())?;
    w.write_all(&g.dx().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_binary<R: Read>(mut r: R, boundary: Boundary) -> Result<Field, FieldIoError> {
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut f64buf)?;
    let half_width = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let dx = f64::from_le_bytes(f64buf);
    let grid = GridSpec::new(dim, half_width, n, boundary)?;
    if (grid.dx() - dx).abs() > 1e-12 * dx.abs() {
        return Err(FieldIoError::Parse {
            line: 0,
            msg: format!("header dx {dx} inconsistent with 2L/n = {}", grid.dx()),
        });
    }
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut f64buf)?;
        values.push(f64::from_le_bytes(f64buf));
    }
    Ok(Field::from_values(grid, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_and_binary_round_trip(
            dim in 1usize..=2,
            n in 8usize..14,
            half in 0.5f64..20.0,
            seed in proptest::collection::vec(-1e3f64..1e3, 196),
        ) {
            let g = GridSpec::new(dim, half, n, Boundary::NoFlux).unwrap();
            let f = Field::from_values(g, seed[..g.len()].to_vec()).unwrap();
            let back = read_csv(to_csv_string(&f).as_bytes(), Boundary::NoFlux).unwrap();
            prop_assert!(back.grid().same_as(f.grid()));
            prop_assert_eq!(back.values(), f.values());
            let mut bin = Vec::new();
            write_binary(&f, &mut bin).unwrap();
            prop_assert_eq!(bin.len(), 24 + 8 * g.len());
            let back = read_binary(bin.as_slice(), Boundary::NoFlux).unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn rejects_ragged_csv() {
        let text = "x,value\n0.5,1\n1.5\n";
        assert!(matches!(read_csv(text.as_bytes(), Boundary::NoFlux), Err(FieldIoError::Parse { line: 3, .. })));
    }
}
