//! Checkpoints, variant config files and image input.

pub mod checkpoint;
pub mod config_file;
pub mod image;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config_file::{
    load_variant, parse_variant, resolve_variant, variant_to_json, VariantConfigFile,
};
pub use image::{
    center_crop, read_image, read_ppm, read_raw_tensor, write_ppm, write_raw_tensor, IMAGE_MEAN,
    IMAGE_STD,
};
