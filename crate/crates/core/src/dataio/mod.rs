//! Image and mask codecs, dataset manifests, cross-validation splits and the
//! synthetic phantom generator.

mod image;
mod manifest;
pub mod phantom;

pub use image::{decode_voc_mask, encode_voc_mask, load_image_3ch, save_gray_png, GrayImage, VOC_MAROON, VOC_PALETTE};
pub use manifest::{
    build_manifest, kfold_splits, scan_dataset_dir, select_mid_scan, DatasetManifest, DatasetTag, ManifestItem,
    ScanRef, Split, SubjectPools, SubjectScans,
};
pub use phantom::{generate_phantom, generate_phantom_with, PhantomConfig, PhantomScan, PhantomSubject};
