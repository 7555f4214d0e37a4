//! Text and PGM interchange for fields.
//!
//! 1D signals are one value per line. 2D fields are headerless comma-separated
//! rows or PGM (P2/P5, 8- or 16-bit). PGM samples map linearly onto a value
//! range recorded in a `# decomp-range <min> <max>` comment; files without it
//! map onto `[0, 1]`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::DecompError;
use crate::field::{Grid, GridField};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Field(#[from] DecompError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Significant digits used when writing text.
pub const CSV_DIGITS: usize = 12;

fn fmt_value(x: f64) -> String {
    format!("{:.*e}", CSV_DIGITS - 1, x)
}

fn parse_value(s: &str, line: usize) -> IoResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|e| IoError::Parse { line, msg: format!("cannot parse {:?}: {e}", s.trim()) })?;
    if !v.is_finite() {
        return Err(IoError::Parse { line, msg: format!("non-finite value {v}") });
    }
    Ok(v)
}

/// Parse CSV text. A single column gives a 1D field, several columns a 2D
/// field with one grid row per line. Blank lines and `#` comments are skipped.
pub fn parse_csv(text: &str) -> IoResult<GridField> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line.split(',').map(|s| parse_value(s, i + 1)).collect::<IoResult<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(IoError::Parse {
                    line: i + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Format("no values found".into()));
    }
    let cols = rows[0].len();
    if cols == 1 {
        return Ok(GridField::from_1d(rows.into_iter().map(|r| r[0]).collect())?);
    }
    let grid = Grid::new_2d(rows.len(), cols)?;
    Ok(GridField::new(grid, rows.concat())?)
}

pub fn format_csv(u: &GridField) -> IoResult<String> {
    let grid = u.grid();
    let mut s = String::with_capacity(grid.len() * 20);
    match grid.dims() {
        1 => {
            for &x in u.values() {
                s.push_str(&fmt_value(x));
                s.push('\n');
            }
        }
        _ => {
            let cols = grid.shape()[1];
            for row in u.values().chunks(cols) {
                let line: Vec<String> = row.iter().map(|&x| fmt_value(x)).collect();
                s.push_str(&line.join(","));
                s.push('\n');
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, `height` rows of `width`.
    pub samples: Vec<u16>,
    /// Values represented by sample `0` and sample `maxval`.
    pub range: (f64, f64),
}

impl PgmImage {
    pub fn to_field(&self) -> IoResult<GridField> {
        let (lo, hi) = self.range;
        let m = self.maxval as f64;
        let vals = self
            .samples
            .iter()
            .map(|&s| {
                let a = s as f64 / m;
                // exact at both endpoints
                lo * (1.0 - a) + hi * a
            })
            .collect();
        Ok(GridField::new(Grid::new_2d(self.height, self.width)?, vals)?)
    }

    /// Quantize a 2D field onto `maxval + 1` levels spanning its own range.
    pub fn from_field(u: &GridField, maxval: u16) -> IoResult<PgmImage> {
        if u.grid().dims() != 2 {
            return Err(IoError::Format("PGM holds 2D fields only".into()));
        }
        if maxval == 0 {
            return Err(IoError::Format("PGM maxval must be positive".into()));
        }
        let (lo, hi) = u.min_max();
        let m = maxval as f64;
        let samples = u
            .values()
            .iter()
            .map(|&x| if hi > lo { ((x - lo) / (hi - lo) * m).round().clamp(0.0, m) as u16 } else { 0 })
            .collect();
        Ok(PgmImage {
            width: u.grid().shape()[1],
            height: u.grid().shape()[0],
            maxval,
            samples,
            range: (lo, hi),
        })
    }

    pub fn encode(&self, binary: bool) -> Vec<u8> {
        let mut out = format!(
            "{}\n# decomp-range {} {}\n{} {}\n{}\n",
            if binary { "P5" } else { "P2" },
            // shortest exact representation so the mapping survives a round trip
            format!("{:e}", self.range.0),
            format!("{:e}", self.range.1),
            self.width,
            self.height,
            self.maxval
        )
        .into_bytes();
        if binary {
            for &s in &self.samples {
                if self.maxval < 256 {
                    out.push(s as u8);
                } else {
                    out.extend_from_slice(&s.to_be_bytes());
                }
            }
        } else {
            for row in self.samples.chunks(self.width.max(1)) {
                let line: Vec<String> = row.iter().map(|s| s.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> IoResult<PgmImage> {
        let mut pos = 0;
        let mut range = None;
        let mut tokens = Vec::with_capacity(4);
        // header: magic, width, height, maxval, with comments anywhere between
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(IoError::Format("truncated PGM header".into()));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                let parts: Vec<&str> = comment.split_whitespace().collect();
                if parts.len() == 3 && parts[0] == "decomp-range" {
                    let lo = parse_value(parts[1], 0)?;
                    let hi = parse_value(parts[2], 0)?;
                    range = Some((lo, hi));
                }
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let binary = match tokens[0].as_str() {
            "P5" => true,
            "P2" => false,
            other => return Err(IoError::Format(format!("unsupported PGM magic {other:?}"))),
        };
        let num = |s: &str, what: &str| -> IoResult<usize> {
            s.parse().map_err(|_| IoError::Format(format!("bad PGM {what} {s:?}")))
        };
        let width = num(&tokens[1], "width")?;
        let height = num(&tokens[2], "height")?;
        let maxval = num(&tokens[3], "maxval")?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(IoError::Format(format!("bad PGM dimensions {width}x{height}, maxval {maxval}")));
        }
        let count = width * height;
        let samples: Vec<u16> = if binary {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let raster = bytes.get(pos..pos + count * bpp).ok_or_else(|| IoError::Format("truncated PGM raster".into()))?;
            if bpp == 1 {
                raster.iter().map(|&b| b as u16).collect()
            } else {
                raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
            }
        } else {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals = text
                .split_whitespace()
                .map(|s| s.parse::<u16>().map_err(|_| IoError::Format(format!("bad PGM sample {s:?}"))))
                .collect::<IoResult<Vec<_>>>()?;
            if vals.len() != count {
                return Err(IoError::Format(format!("expected {count} PGM samples, found {}", vals.len())));
            }
            vals
        };
        if let Some(s) = samples.iter().find(|&&s| s as usize > maxval) {
            return Err(IoError::Format(format!("PGM sample {s} exceeds maxval {maxval}")));
        }
        Ok(PgmImage { width, height, maxval: maxval as u16, samples, range: range.unwrap_or((0.0, 1.0)) })
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Read a field, choosing the format from the extension (`.pgm`, else CSV).
pub fn read_field(path: &Path) -> IoResult<GridField> {
    if is_pgm(path) {
        PgmImage::decode(&fs::read(path)?)?.to_field()
    } else {
        parse_csv(&fs::read_to_string(path)?)
    }
}

/// Write a field; `.pgm` paths get 16-bit binary PGM, everything else CSV.
pub fn write_field(path: &Path, u: &GridField) -> IoResult<()> {
    if is_pgm(path) {
        fs::write(path, PgmImage::from_field(u, u16::MAX)?.encode(true))?;
    } else {
        fs::write(path, format_csv(u)?)?;
    }
    Ok(())
}
