//! File formats connecting the pipeline to its producers: `.rimt` tensors and
//! the JSON manifest.

pub mod format;
pub mod manifest;

pub use format::{decode_tensor, encode_tensor, read_tensor, write_tensor, FormatError};
pub use manifest::{
    default_prompt, load_manifest, CategoryEntry, Manifest, ManifestError, ManifestFile,
    ReferenceEntry, ReferenceImage, ReferenceImageEntry, TestEntry, TestImage,
};
