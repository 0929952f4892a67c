//! Dataset manifests, ear annotations and the synthetic dataset generator.

mod annotation;
mod manifest;
pub mod synth;

pub use annotation::{is_simple, load_annotation, rasterize_polygon, BinaryMask, PolygonAnnotation};
pub use manifest::{
    parse_manifest, ImageRecord, Manifest, Sex, Side, ValidationWarning,
    DEFAULT_SESSION_SPACING_MONTHS, MANIFEST_COLUMNS,
};
pub use synth::{generate_synthetic, SynthConfig};
