//! Lens prescription files.
//!
//! Two encodings are accepted. The JSON form:
//!
//! ```text
//! {
//!   "name": "doublet",
//!   "focal_length": 100.0,
//!   "sensor_diagonal": 43.27,
//!   "target_z": -1000.0,
//!   "elements": ["cemented_doublet"],
//!   "surfaces": [
//!     {"curvature": 0.016, "extent": 12.0, "gap": 6.0, "index_after": 1.5168},
//!     ...
//!   ]
//! }
//! ```
//!
//! and a whitespace table with one surface per line
//! (`curvature extent gap index_after`), `key: value` metadata lines and
//! `#` comments. When elements are not listed they are inferred from the
//! indices: each run of surfaces ending in air is one element, two surfaces
//! for a singlet and three for a cemented doublet.

use crate::lens::{ElementKind, LensError, LensSystem, SurfaceSpec, AIR};
use crate::loss::FULL_FRAME_DIAGONAL;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrescriptionError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}surface row {row}, {field}: {message}", line.map(|l| format!("line {l}, ")).unwrap_or_default())]
    Row {
        /// 1-based surface row.
        row: usize,
        line: Option<usize>,
        field: String,
        message: String,
    },
    #[error("invalid lens: {0}")]
    Lens(#[from] LensError),
}

fn default_diagonal() -> f64 {
    FULL_FRAME_DIAGONAL
}

/// A lens prescription with its design metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prescription {
    #[serde(default)]
    pub name: String,
    /// Design focal length, mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_length: Option<f64>,
    /// Sensor diagonal, mm.
    #[serde(default = "default_diagonal")]
    pub sensor_diagonal: f64,
    pub target_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<ElementKind>>,
    pub surfaces: Vec<SurfaceSpec>,
}

impl Prescription {
    pub fn from_lens(name: &str, lens: &LensSystem, focal_length: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            focal_length,
            sensor_diagonal: FULL_FRAME_DIAGONAL,
            target_z: lens.target_z(),
            elements: Some(lens.elements().to_vec()),
            surfaces: lens.surfaces().to_vec(),
        }
    }

    /// The lens described, with located diagnostics on failure.
    pub fn to_lens(&self) -> Result<LensSystem, PrescriptionError> {
        self.to_lens_located(&[])
    }

    fn to_lens_located(&self, lines: &[usize]) -> Result<LensSystem, PrescriptionError> {
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Err(LensError::Invalid {
                field,
                value,
                reason,
                ..
            }) = s.check(i)
            {
                return Err(PrescriptionError::Row {
                    row: i + 1,
                    line: lines.get(i).copied(),
                    field: field.to_string(),
                    message: format!("{value} {reason}"),
                });
            }
        }
        let elements = match &self.elements {
            Some(e) => e.clone(),
            None => infer_elements(&self.surfaces, lines)?,
        };
        Ok(LensSystem::new(
            self.surfaces.clone(),
            elements,
            self.target_z,
        )?)
    }

    /// Pretty JSON with a trailing newline. Numbers are written in their
    /// shortest round-tripping form, so parsing the output gives back the
    /// same bits.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("prescriptions serialize");
        s.push('\n');
        s
    }
}

fn infer_elements(
    surfaces: &[SurfaceSpec],
    lines: &[usize],
) -> Result<Vec<ElementKind>, PrescriptionError> {
    let mut out = Vec::new();
    let mut run = 0;
    for (i, s) in surfaces.iter().enumerate() {
        run += 1;
        if s.index_after == AIR {
            out.push(match run {
                2 => ElementKind::Singlet,
                3 => ElementKind::CementedDoublet,
                _ => {
                    return Err(PrescriptionError::Row {
                        row: i + 1,
                        line: lines.get(i).copied(),
                        field: "index_after".into(),
                        message: format!(
                            "air after a run of {run} surfaces; elements have 2 or 3"
                        ),
                    })
                }
            });
            run = 0;
        }
    }
    if run > 0 {
        let i = surfaces.len() - 1;
        return Err(PrescriptionError::Row {
            row: i + 1,
            line: lines.get(i).copied(),
            field: "index_after".into(),
            message: "last surface must be followed by air".into(),
        });
    }
    Ok(out)
}

/// Parses either encoding into a prescription and its lens.
pub fn parse_prescription(text: &str) -> Result<(Prescription, LensSystem), PrescriptionError> {
    if text.trim_start().starts_with('{') {
        let p: Prescription = serde_json::from_str(text).map_err(|e| PrescriptionError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let lens = p.to_lens()?;
        Ok((p, lens))
    } else {
        parse_table(text)
    }
}

const COLUMNS: [&str; 4] = ["curvature", "extent", "gap", "index_after"];

fn parse_table(text: &str) -> Result<(Prescription, LensSystem), PrescriptionError> {
    let mut p = Prescription {
        name: String::new(),
        focal_length: None,
        sensor_diagonal: FULL_FRAME_DIAGONAL,
        target_z: f64::NAN,
        elements: None,
        surfaces: Vec::new(),
    };
    let mut lines = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        if let Some((key, value)) = content.split_once(':') {
            let key = key.trim();
            let value = value.trim();
            let column = raw.find(value).map_or(1, |c| c + 1);
            let number = || {
                value.parse::<f64>().map_err(|_| PrescriptionError::Syntax {
                    line,
                    column,
                    message: format!("{key}: expected a number, found {value:?}"),
                })
            };
            match key {
                "name" => p.name = value.to_string(),
                "focal_length" => p.focal_length = Some(number()?),
                "sensor_diagonal" => p.sensor_diagonal = number()?,
                "target_z" => p.target_z = number()?,
                _ => {
                    return Err(PrescriptionError::Syntax {
                        line,
                        column: raw.find(key).map_or(1, |c| c + 1),
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
            continue;
        }
        let mut values = [0.0; 4];
        let mut count = 0;
        let mut offset = 0;
        for token in content.split_whitespace() {
            let column = offset + content[offset..].find(token).expect("token in line") + 1;
            offset = column - 1 + token.len();
            if count == 4 {
                return Err(PrescriptionError::Syntax {
                    line,
                    column,
                    message: "more than 4 columns".into(),
                });
            }
            values[count] = token.parse().map_err(|_| PrescriptionError::Syntax {
                line,
                column,
                message: format!("{}: expected a number, found {token:?}", COLUMNS[count]),
            })?;
            count += 1;
        }
        if count < 4 {
            return Err(PrescriptionError::Syntax {
                line,
                column: content.trim_end().len() + 1,
                message: format!("missing column {}", COLUMNS[count]),
            });
        }
        p.surfaces
            .push(SurfaceSpec::new(values[0], values[1], values[2], values[3]));
        lines.push(line);
    }
    if p.target_z.is_nan() {
        return Err(PrescriptionError::Syntax {
            line: text.lines().count().max(1),
            column: 1,
            message: "missing target_z".into(),
        });
    }
    let lens = p.to_lens_located(&lines)?;
    Ok((p, lens))
}
