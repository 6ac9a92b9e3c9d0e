//! Reading and writing lens prescriptions, bundled sample lenses and SVG
//! cross-sections.

pub mod prescription;
pub mod standard;
pub mod svg;

pub use prescription::{parse_prescription, Prescription, PrescriptionError};
pub use standard::{standard_lens, StandardLens};
pub use svg::render_svg;
