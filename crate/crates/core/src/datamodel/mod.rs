//! Dataset manifests, class taxonomy, masks and image I/O.

pub mod imageio;
pub mod manifest;
pub mod raster;
pub mod taxonomy;

pub use imageio::{
    encode_gray_png, encode_mask_png, load_image, load_mask, write_gray_png, write_mask_png,
    IntensityWindow,
};
pub use manifest::{
    balance_single_class, load_manifest, load_samples, Balanced, DatasetManifest, LoadedSample,
    ManifestHeader, SampleRecord, SampleRole, Split,
};
pub use raster::{decode_one_hot, encode_one_hot, GrayImage, OneHot, SegmentationMask};
pub use taxonomy::ClassTaxonomy;
