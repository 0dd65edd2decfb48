//! Rasters, file formats, synthetic scenes and patch sampling.

pub mod image;
pub mod io;
pub mod manifest;
pub mod patches;
pub mod synth;

pub use image::{Mask, ProbMap, Region, RgbImage};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use patches::{grid_centers, residential_category, sample_centers, sample_triples, Center, Grid, PatchTriple, ResidentialCategory};
pub use synth::{generate_scene, ObjectClass, Rect, Scene, SceneObject, SynthParams};
