//! Labeled image collections: the synthetic multi-camera corpus, real
//! Market-1501-style directory ingestion, and the manifest file format used
//! by every other stage.

mod filename;
mod ingest;
mod loaded;
pub(crate) mod manifest;
mod record;
mod style;
mod synthetic;

pub use filename::parse_reid_filename;
pub use ingest::{ingest_reid_directory, IngestedDataset};
pub use loaded::LoadedDataset;
pub use manifest::{load_manifest, materialize_images, save_manifest, MANIFEST_VERSION};
pub use record::{DatasetManifest, ImageRecord, ImageRef, Split, JUNK_IDENTITY};
pub use style::{apply_camera_style, CameraStyle, CameraStyles};
pub use synthetic::{
    generate_synthetic_dataset, render_glyph, GlyphParams, GlyphShape, SyntheticCorpus,
    SyntheticSpec,
};
