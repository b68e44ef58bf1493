use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, GeometryError};

/// Elementwise tolerance for rotations read from text.
pub const FILE_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CamFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("rotation is not orthonormal at tolerance 1e-6 (max deviation {deviation:.3e}, det {det:.9})")]
    NonOrthonormalRotation { deviation: f64, det: f64 },
    #[error(transparent)]
    Geometry(GeometryError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One camera: world-to-camera pose, intrinsics and the optional depth line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamFile {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub depth_min: Option<f64>,
    pub depth_interval: Option<f64>,
}

pub fn parse_cam_file(path: impl AsRef<Path>) -> Result<CamFile, CamFileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| CamFileError::Io { path: path.display().to_string(), source })?;
    parse_cam_str(&text)
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, Vec<&'a str>)> + 'a>>,
    last_line: usize,
    /// Line number of the most recent matrix row.
    row_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, Vec<&'a str>)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
                .filter(|(_, t)| !t.is_empty()),
        );
        Self { inner: it.peekable(), last_line: text.lines().count(), row_line: 0 }
    }

    fn expect_header(&mut self, name: &str) -> Result<(), CamFileError> {
        match self.inner.next() {
            Some((_, tokens)) if tokens.len() == 1 && tokens[0].eq_ignore_ascii_case(name) => Ok(()),
            Some((line, tokens)) => Err(CamFileError::Parse {
                line,
                message: format!("expected \"{name}\", found \"{}\"", tokens.join(" ")),
            }),
            None => Err(CamFileError::Parse {
                line: self.last_line + 1,
                message: format!("expected \"{name}\", found end of file"),
            }),
        }
    }

    /// Reads `rows` lines of `cols` numbers each.
    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>, CamFileError> {
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (line, tokens) = self.inner.next().ok_or_else(|| CamFileError::Parse {
                line: self.last_line + 1,
                message: format!("{name}: expected {rows} rows, found {r}"),
            })?;
            if tokens.len() != cols {
                return Err(CamFileError::Parse {
                    line,
                    message: format!("{name}: expected {cols} values per row, found {}", tokens.len()),
                });
            }
            for t in tokens {
                out.push(number(line, t)?);
            }
            self.row_line = line;
        }
        Ok(out)
    }
}

fn number(line: usize, token: &str) -> Result<f64, CamFileError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CamFileError::Parse { line, message: format!("expected a number, found \"{token}\"") })
}

pub fn parse_cam_str(text: &str) -> Result<CamFile, CamFileError> {
    let mut lines = Lines::new(text);
    lines.expect_header("extrinsic")?;
    let e = lines.matrix("extrinsic", 4, 4)?;
    if (e[12].abs() + e[13].abs() + e[14].abs() + (e[15] - 1.0).abs()) > 1e-9 {
        return Err(CamFileError::Parse {
            line: lines.row_line,
            message: "extrinsic: last row must be 0 0 0 1".into(),
        });
    }
    lines.expect_header("intrinsic")?;
    let k = lines.matrix("intrinsic", 3, 3)?;

    let (depth_min, depth_interval) = match lines.inner.next() {
        None => (None, None),
        Some((line, tokens)) => {
            let d_min = number(line, tokens[0])?;
            let interval = tokens.get(1).map(|t| number(line, t)).transpose()?;
            (Some(d_min), interval)
        }
    };
    if let Some((line, tokens)) = lines.inner.next() {
        return Err(CamFileError::Parse {
            line,
            message: format!("unexpected trailing content \"{}\"", tokens.join(" ")),
        });
    }

    let rotation = Matrix3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]);
    let translation = Vector3::new(e[3], e[7], e[11]);
    let extrinsics = CameraExtrinsics::with_tolerance(rotation, translation, FILE_ROTATION_TOLERANCE)
        .map_err(|err| match err {
            GeometryError::NonOrthonormalRotation { deviation, det } => {
                CamFileError::NonOrthonormalRotation { deviation, det }
            }
            other => CamFileError::Geometry(other),
        })?
        .orthonormalized();
    let kmat = Matrix3::from_row_slice(&k);
    let intrinsics = CameraIntrinsics::from_matrix(&kmat).map_err(CamFileError::Geometry)?;
    Ok(CamFile { intrinsics, extrinsics, depth_min, depth_interval })
}

/// Serializes in the same layout `parse_cam_str` reads, using shortest
/// round-trip float formatting.
pub fn format_cam_file(cam: &CamFile) -> String {
    let mut s = String::from("extrinsic\n");
    let r = cam.extrinsics.rotation();
    let t = cam.extrinsics.translation();
    for i in 0..3 {
        let _ = writeln!(s, "{} {} {} {}", r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    }
    s.push_str("0 0 0 1\n\nintrinsic\n");
    let k = cam.intrinsics.matrix();
    for i in 0..3 {
        let _ = writeln!(s, "{} {} {}", k[(i, 0)], k[(i, 1)], k[(i, 2)]);
    }
    if let Some(d) = cam.depth_min {
        s.push('\n');
        match cam.depth_interval {
            Some(i) => {
                let _ = writeln!(s, "{d} {i}");
            }
            None => {
                let _ = writeln!(s, "{d}");
            }
        }
    }
    s
}
