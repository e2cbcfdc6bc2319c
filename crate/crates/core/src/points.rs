//! Precision points and the CSV points file.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header of an absolute points file.
pub const ABSOLUTE_HEADER: [&str; 2] = ["theta_in_deg", "theta_out_deg"];
/// Header of a relative points file.
pub const RELATIVE_HEADER: [&str; 2] = ["d_theta_in_deg", "d_theta_out_deg"];

#[derive(Debug, Error)]
pub enum PointsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unrecognised points header {0:?}")]
    Header(Vec<String>),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("{0}")]
    Shape(String),
}

/// One `(input angle, output angle)` pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub theta_in: f64,
    pub theta_out: f64,
}

impl PrecisionPoint {
    pub const fn new(theta_in: f64, theta_out: f64) -> Self {
        Self { theta_in, theta_out }
    }
}

/// Ordered absolute precision points.
///
/// Inputs are cycle parameters: a rocker's return leg is encoded with a `2pi`
/// shift, so they are never wrapped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrecisionPointSequence {
    pub points: Vec<PrecisionPoint>,
}

impl PrecisionPointSequence {
    pub fn new(points: Vec<PrecisionPoint>) -> Self {
        Self { points }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(i, o)| PrecisionPoint::new(i, o)).collect())
    }

    pub fn from_degrees(pairs: &[(f64, f64)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(i, o)| PrecisionPoint::new(i.to_radians(), o.to_radians()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.theta_in)
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.theta_out)
    }
}

/// Relative precision points: offsets from an unspecified initial pose. The
/// first entry is the zero reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePointSequence {
    deltas: Vec<PrecisionPoint>,
}

impl RelativePointSequence {
    /// Offsets of points `2..=n`; the zero reference is prepended.
    pub fn from_offsets(offsets: &[(f64, f64)]) -> Self {
        let mut deltas = vec![PrecisionPoint::new(0.0, 0.0)];
        deltas.extend(offsets.iter().map(|&(i, o)| PrecisionPoint::new(i, o)));
        Self { deltas }
    }

    /// Offsets including the leading zero reference; fails when it is missing.
    pub fn with_reference(deltas: Vec<PrecisionPoint>) -> Result<Self, PointsError> {
        match deltas.first() {
            None => Err(PointsError::Shape("relative points need at least two rows".into())),
            Some(first) if first.theta_in != 0.0 || first.theta_out != 0.0 => Err(PointsError::Shape(
                "the first relative row must be the zero reference 0,0".into(),
            )),
            Some(_) if deltas.len() < 2 => {
                Err(PointsError::Shape("relative points need at least two rows".into()))
            }
            Some(_) => Ok(Self { deltas }),
        }
    }

    /// Relative view of an absolute sequence, measured from its first point.
    pub fn from_absolute(abs: &PrecisionPointSequence) -> Self {
        let first = abs.points[0];
        Self {
            deltas: abs
                .points
                .iter()
                .map(|p| PrecisionPoint::new(p.theta_in - first.theta_in, p.theta_out - first.theta_out))
                .collect(),
        }
    }

    pub fn deltas(&self) -> &[PrecisionPoint] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Absolute points for the initial pose `(theta_in0, theta_out0)`.
    pub fn anchor(&self, theta_in0: f64, theta_out0: f64) -> PrecisionPointSequence {
        PrecisionPointSequence::new(
            self.deltas
                .iter()
                .map(|d| PrecisionPoint::new(theta_in0 + d.theta_in, theta_out0 + d.theta_out))
                .collect(),
        )
    }
}

/// Contents of a points file, in radians.
#[derive(Debug, Clone, PartialEq)]
pub enum PointsFile {
    Absolute(PrecisionPointSequence),
    Relative(RelativePointSequence),
}

impl PointsFile {
    pub fn read_path(path: impl AsRef<Path>) -> Result<Self, PointsError> {
        Self::read(std::fs::File::open(path)?)
    }

    /// Parses a CSV file whose header selects absolute or relative mode.
    /// Angles are in degrees.
    pub fn read(reader: impl Read) -> Result<Self, PointsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let relative = if header == ABSOLUTE_HEADER {
            false
        } else if header == RELATIVE_HEADER {
            true
        } else {
            return Err(PointsError::Header(header));
        };
        let mut rows = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            if record.len() != 2 {
                return Err(PointsError::Row { row, msg: format!("expected 2 fields, got {}", record.len()) });
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| PointsError::Row { row, msg: format!("bad angle {s:?}") })
            };
            rows.push(PrecisionPoint::new(parse(&record[0])?.to_radians(), parse(&record[1])?.to_radians()));
        }
        if relative {
            Ok(PointsFile::Relative(RelativePointSequence::with_reference(rows)?))
        } else if rows.is_empty() {
            Err(PointsError::Shape("absolute points need at least one row".into()))
        } else {
            Ok(PointsFile::Absolute(PrecisionPointSequence::new(rows)))
        }
    }

    pub fn write(&self, writer: impl Write) -> Result<(), PointsError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let (header, rows) = match self {
            PointsFile::Absolute(seq) => (ABSOLUTE_HEADER, &seq.points[..]),
            PointsFile::Relative(rel) => (RELATIVE_HEADER, rel.deltas()),
        };
        wtr.write_record(header)?;
        for p in rows {
            wtr.write_record([format_deg(p.theta_in.to_degrees()), format_deg(p.theta_out.to_degrees())])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn format_deg(v: f64) -> String {
    format!("{v:.15e}")
}
