//! ESRI ASCII grid rasters.
//!
//! Rows in the file run north to south; in memory row `j = 0` is the
//! southern edge, so the file is flipped on read and write.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{FloodError, Result};
use crate::grid::Terrain;

/// Bed elevation given to NODATA cells: high enough never to flood.
pub const NODATA_BED: f64 = 1.0e4;

const NODATA_OUT: f64 = -9999.0;

/// A parsed raster: values are row-major with row 0 in the south.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub ncols: usize,
    pub nrows: usize,
    /// Lower-left corner of the lower-left cell.
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: Option<f64>,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn is_nodata(&self, v: f64) -> bool {
        self.nodata.is_some_and(|nd| v == nd)
    }

    pub fn into_terrain(self) -> Result<Terrain> {
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_nodata(v) { NODATA_BED } else { v })
            .collect();
        Terrain::new(self.ncols, self.nrows, self.cellsize, (self.xll, self.yll), values)
    }
}

pub fn parse_raster(text: &str, path: &str) -> Result<Raster> {
    let err = |line: usize, msg: String| FloodError::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();

    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = (false, false);
    let mut cellsize = None;
    let mut nodata = None;
    while let Some(&(no, line)) = lines.peek() {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_lowercase();
        if key.parse::<f64>().is_ok() || key.starts_with('-') {
            break;
        }
        let value = parts.next().ok_or_else(|| err(no + 1, format!("header key '{key}' has no value")))?;
        if parts.next().is_some() {
            return Err(err(no + 1, format!("header line for '{key}' has extra fields")));
        }
        let num = value
            .parse::<f64>()
            .map_err(|_| err(no + 1, format!("header value '{value}' for '{key}' is not a number")))?;
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(err(no + 1, format!("'{key}' must be a positive integer, got {value}")))
            }
        };
        match key.as_str() {
            "ncols" => ncols = Some(count(num)?),
            "nrows" => nrows = Some(count(num)?),
            "xllcorner" => xll = Some(num),
            "yllcorner" => yll = Some(num),
            "xllcenter" => {
                xll = Some(num);
                centered.0 = true;
            }
            "yllcenter" => {
                yll = Some(num);
                centered.1 = true;
            }
            "cellsize" => cellsize = Some(num),
            "nodata_value" => nodata = Some(num),
            "dx" | "dy" => {
                return Err(err(no + 1, "separate dx/dy cell sizes are not supported; cells must be square".into()));
            }
            _ => return Err(err(no + 1, format!("unknown header key '{key}'"))),
        }
        lines.next();
    }
    let header_end = lines.peek().map_or(text.lines().count(), |&(no, _)| no);
    let missing = |k: &str| err(header_end, format!("header is missing '{k}'"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    if !(cellsize > 0.0 && cellsize.is_finite()) {
        return Err(err(header_end, format!("cellsize must be positive, got {cellsize}")));
    }
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        xll -= 0.5 * cellsize;
    }
    if centered.1 {
        yll -= 0.5 * cellsize;
    }

    let mut values = vec![0.0; ncols * nrows];
    let mut row = 0;
    for (no, line) in lines {
        if row >= nrows {
            return Err(err(no + 1, format!("more than {nrows} data rows")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != ncols {
            return Err(err(
                no + 1,
                format!("data row {} has {} values, expected ncols = {ncols}", row + 1, fields.len()),
            ));
        }
        let j = nrows - 1 - row;
        for (i, f) in fields.iter().enumerate() {
            let v = f
                .parse::<f64>()
                .map_err(|_| err(no + 1, format!("data row {} column {}: '{f}' is not a number", row + 1, i + 1)))?;
            if !v.is_finite() {
                return Err(err(no + 1, format!("data row {} column {}: non-finite value", row + 1, i + 1)));
            }
            values[i + j * ncols] = v;
        }
        row += 1;
    }
    if row != nrows {
        return Err(err(text.lines().count(), format!("found {row} data rows, expected nrows = {nrows}")));
    }
    Ok(Raster {
        ncols,
        nrows,
        xll,
        yll,
        cellsize,
        nodata,
        values,
    })
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).map_err(|e| FloodError::io(path, e))?;
    parse_raster(&text, &path.display().to_string())
}

/// Parse an elevation raster. NODATA cells become high ground.
pub fn load_terrain(path: &Path) -> Result<Terrain> {
    read_raster(path)?.into_terrain()
}

/// Format `values` (row 0 south) on the grid of `terrain`. Non-finite
/// values are written as NODATA.
pub fn format_raster(terrain: &Terrain, values: &[f64]) -> String {
    let (nx, ny) = (terrain.nx(), terrain.ny());
    let (x0, y0) = terrain.origin();
    let mut out = String::with_capacity(nx * ny * 14 + 128);
    let _ = writeln!(out, "ncols {nx}");
    let _ = writeln!(out, "nrows {ny}");
    let _ = writeln!(out, "xllcorner {x0:e}");
    let _ = writeln!(out, "yllcorner {y0:e}");
    let _ = writeln!(out, "cellsize {:e}", terrain.h());
    let _ = writeln!(out, "NODATA_value {NODATA_OUT}");
    for j in (0..ny).rev() {
        let row = &values[j * nx..(j + 1) * nx];
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let v = if v.is_finite() { *v } else { NODATA_OUT };
            let _ = write!(out, "{v:.6e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_raster(path: &Path, terrain: &Terrain, values: &[f64]) -> Result<()> {
    fs::write(path, format_raster(terrain, values)).map_err(|e| FloodError::io(path, e))
}
