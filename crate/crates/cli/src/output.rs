//! Artifact writing: JSON at 17 significant digits, CSV at 12, atomic
//! replacement of each file.

use std::io::{self, Write};
use std::path::Path;

use frugal_core::matrixkit::{self, Matrix};
use frugal_core::family;
use frugal_core::simlab::fmt_sig;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::CliError;

/// Pretty JSON with every float in `{:.16e}` form.
struct FullPrecision<'a>(PrettyFormatter<'a>);

impl Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Numerical(format!("cannot serialize artifact: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Replaces `path` with `bytes` through a temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, &to_json(value)?)
}

/// CSV with a schema comment line; cells are strings or numbers.
pub struct Csv {
    buf: String,
    width: usize,
}

pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Csv {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self {
            buf: format!("# schema: {schema}\n{}\n", header.join(",")),
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.width, "row width must match the header");
        let text: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Num(v) => fmt_sig(v),
                Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
                Cell::Text(s) => s,
            })
            .collect();
        self.buf.push_str(&text.join(","));
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.buf.as_bytes())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

/// Boundary of the image of the unit ball under `map`, `samples` points.
///
/// For two output rows the boundary is `(A Aᵀ)^{½}` applied to the unit
/// circle; a single row gives the segment `[−‖A‖, ‖A‖]` on the first axis.
/// Maps with more than two rows have no planar image and return `None`.
pub fn ellipse_points(map: &Matrix, samples: usize) -> Option<Vec<(f64, f64)>> {
    match map.nrows() {
        1 => {
            let r = map.norm();
            Some(
                (0..samples)
                    .map(|k| (r * (2.0 * std::f64::consts::PI * k as f64 / samples as f64).cos(), 0.0))
                    .collect(),
            )
        }
        2 => {
            let gram = matrixkit::symmetrize(&(map * map.transpose()));
            let eig = matrixkit::sym_eig(&gram).ok()?;
            let mut half = eig.eigenvectors.clone();
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                half.column_mut(i).scale_mut(lam.max(0.0).sqrt());
            }
            let root = &half * eig.eigenvectors.transpose();
            Some(family::unit_circle_image(&root, samples).iter().map(|p| (p[0], p[1])).collect())
        }
        _ => None,
    }
}
